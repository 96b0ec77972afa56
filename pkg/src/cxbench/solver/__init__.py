"""LP and mixed-integer machinery for exact counterfactual search."""
from .lp import LinearProgram, LPResult, StandardForm, Tableau, lp_solve
from .milo import (
    DEFAULT_MARGIN,
    DEFAULT_NODE_LIMIT,
    EncodedModel,
    MiloProblem,
    MiloSolution,
    activation_bounds,
    encode,
    solve_armin,
    solve_milo,
    to_lp_text,
)

__all__ = [
    "LinearProgram", "LPResult", "StandardForm", "Tableau", "lp_solve",
    "DEFAULT_MARGIN", "DEFAULT_NODE_LIMIT", "EncodedModel", "MiloProblem",
    "MiloSolution", "activation_bounds", "encode", "solve_armin", "solve_milo",
    "to_lp_text",
]
