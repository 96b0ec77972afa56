import numpy as np
import pytest

from cxbench.model import Classifier


def fixture_net() -> Classifier:
    """Single active unit computing x + y - 4: class 1 iff x + y >= 4."""
    return Classifier([[1.0, 1.0]], [0.0], [1.0], -4.0)


@pytest.fixture
def F() -> Classifier:
    return fixture_net()


def random_net(rng, n: int, hidden: int, scale: float = 1.0) -> Classifier:
    return Classifier(rng.normal(size=(hidden, n)) * scale, rng.normal(size=hidden),
                      rng.normal(size=hidden) * scale, float(rng.normal()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_blobs_csv(path, n_rows=160, n_features=3, separation=3.0, seed=0):
    """A small two-cluster CSV with a ``y`` target column."""
    from cxbench.data import synth_blobs, write_csv
    ds = synth_blobs(n_rows, n_features, separation, seed)
    write_csv(path, ds.features, ds.labels, ds.feature_names, "y")
    return path


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion

_ACCEPTANCE_NOTES: dict = {}
_ACCEPTANCE_OUTCOMES: dict = {}


@pytest.fixture
def acceptance():
    def note(criterion: str, text: str):
        _ACCEPTANCE_NOTES.setdefault(criterion, []).append(text)
    return note


def _criterion(nodeid: str):
    import re
    m = re.search(r"test_acceptance\.py::test_c(\d+)_", nodeid)
    return f"C{m.group(1)}" if m else None


def pytest_runtest_logreport(report):
    c = _criterion(report.nodeid)
    if c is None or (report.when != "call" and report.passed):
        return
    ok = _ACCEPTANCE_OUTCOMES.get(c, True) and report.passed
    _ACCEPTANCE_OUTCOMES[c] = ok


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_OUTCOMES:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(_ACCEPTANCE_OUTCOMES, key=lambda k: int(k[1:])):
        notes = "; ".join(_ACCEPTANCE_NOTES.get(c, []))
        tr.write_line(f"[{c}] {'PASS' if _ACCEPTANCE_OUTCOMES[c] else 'FAIL'}  {notes}")
