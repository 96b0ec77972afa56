"""Counterfactual explanations for incomplete tabular inputs, with a benchmark harness."""

__version__ = "0.1.0"
