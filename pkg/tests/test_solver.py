import itertools

import numpy as np
import pytest

from cxbench.solver import (
    DEFAULT_MARGIN, LinearProgram, MiloProblem, activation_bounds, encode, lp_solve,
    solve_armin, solve_milo, to_lp_text,
)
from cxbench.solver.lp import StandardForm, Tableau

from conftest import random_net


# ---------------------------------------------------------------------------
# LP

def test_lp_single_variable():
    res = lp_solve(LinearProgram([1.0], [[1.0], [1.0]], [">=", "<="], [3.0, 10.0],
                                 lo=[-np.inf], hi=[np.inf]))
    assert res.optimal
    assert res.x[0] == pytest.approx(3.0) and res.value == pytest.approx(3.0)


def test_lp_tight_constraint():
    res = lp_solve(LinearProgram([1.0, 1.0], [[1.0, 1.0]], [">="], [4.0], lo=[0, 0], hi=[5, 5]))
    assert res.optimal and res.value == pytest.approx(4.0, abs=1e-9)


def test_lp_statuses():
    infeasible = LinearProgram([1.0], [[1.0]], [">="], [3.0], lo=[0.0], hi=[2.0])
    assert lp_solve(infeasible).status == "infeasible"
    unbounded = LinearProgram([-1.0], [[1.0]], [">="], [0.0])
    assert lp_solve(unbounded).status == "unbounded"
    eq = lp_solve(LinearProgram([1.0, 2.0], [[1.0, 1.0]], ["="], [3.0]))
    assert eq.optimal and eq.value == pytest.approx(3.0)


def test_lp_rejects_bad_input():
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0]], ["<"], [1.0])
    with pytest.raises(ValueError):
        LinearProgram([1.0], [[1.0]], ["<="], [1.0], lo=[2.0], hi=[1.0])


def vertex_oracle(c, A, b, lo, hi):
    """min c x over {A x <= b, lo <= x <= hi} by enumerating every basic solution."""
    n = len(c)
    G = np.vstack([A, np.eye(n), -np.eye(n)])
    h = np.concatenate([b, hi, -lo])
    best = np.inf
    for rows in itertools.combinations(range(len(G)), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = min(best, float(c @ x))
    return best


def test_lp_matches_vertex_enumeration():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 50:
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 11))
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(0, 1, n)
        b = A @ x0 + rng.uniform(0, 1, m)  # x0 is feasible
        lo, hi = np.zeros(n), np.full(n, 2.0)
        c = rng.normal(size=n)
        res = lp_solve(LinearProgram(c, A, ["<="] * m, b, lo, hi))
        assert res.optimal
        assert res.value == pytest.approx(vertex_oracle(c, A, b, lo, hi), abs=1e-6)
        assert np.all(A @ res.x <= b + 1e-7)
        assert np.all(res.x >= lo - 1e-7) and np.all(res.x <= hi + 1e-7)
        checked += 1


def _bounded_lp(rng, m, n):
    A = rng.normal(size=(m, n))
    b = A @ rng.uniform(0.2, 0.8, n) + rng.uniform(0, 0.5, m)
    full = np.hstack([A, np.eye(m)])
    c = np.concatenate([rng.normal(size=n), np.zeros(m)])
    lo = np.zeros(n + m)
    hi = np.concatenate([np.ones(n), np.full(m, np.inf)])
    return StandardForm(full, b, c, lo, hi, slack_of_row=np.arange(n, n + m)), n


def test_warm_starts_agree_with_cold_solves():
    # chains of bound changes, as branch and bound produces them
    rng = np.random.default_rng(1)
    for _ in range(60):
        sf, n = _bounded_lp(rng, int(rng.integers(2, 8)), int(rng.integers(2, 8)))
        lo, hi = sf.lo.copy(), sf.hi.copy()
        res = sf.solve(lo, hi)
        assert res.optimal
        for _ in range(6):
            j = int(rng.integers(n))
            v = float(rng.choice([0.0, 1.0, rng.uniform()]))
            if rng.uniform() < 0.5:
                lo[j] = min(v, hi[j])
            else:
                hi[j] = max(v, lo[j])
            cold = sf.solve(lo, hi)
            starts = [res.tableau] if res.tableau is not None else []
            if res.basis is not None:
                starts.append((res.basis, res.state))
            for warm in starts:
                got = sf.solve(lo, hi, warm)
                assert got.status == cold.status
                if cold.optimal:
                    assert got.value == pytest.approx(cold.value, abs=1e-8)
            if not cold.optimal:
                break
            res = sf.solve(lo, hi, res.tableau) if res.tableau is not None else cold
            assert res.tableau is None or isinstance(res.tableau, Tableau)


# ---------------------------------------------------------------------------
# MILO encoding and branch and bound

def box5(F, x_hat, t, margin=0.0):
    return MiloProblem(F, np.array(x_hat, float), t, margin,
                       box_lo=np.zeros(2), box_hi=np.full(2, 5.0))


def test_big_m_on_fixture(F):
    lo, hi = activation_bounds(F, np.zeros(2), np.full(2, 5.0))
    assert hi[0] == 10.0
    assert max(-lo[0], 0.0) == 0.0
    enc = encode(box5(F, (2, 1), 1))
    # the unit is stable over the box, so no indicator is needed
    assert len(enc.z_cols) == 0
    np.testing.assert_array_equal(enc.big_m_plus, [[10.0]])
    np.testing.assert_array_equal(enc.big_m_minus, [[0.0]])


def test_encode_empty_box(F):
    prob = MiloProblem(F, [0.5, 0.5], 1, box_lo=np.ones(2), box_hi=np.zeros(2))
    with pytest.raises(ValueError):
        encode(prob)


def test_milo_fixture_examples(F):
    sol = solve_milo(box5(F, (2, 1), 1))
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-9)
    assert sol.x.sum() == pytest.approx(4.0, abs=1e-9)
    sol = solve_milo(box5(F, (2, 2), 1))
    assert sol.status == "optimal" and sol.objective == 0.0
    np.testing.assert_array_equal(sol.x, [2.0, 2.0])
    unit = MiloProblem(F, np.array([0.5, 0.5]), 1, 0.0)
    assert solve_milo(unit).status == "infeasible"


def test_milo_margin(F):
    sol = solve_milo(box5(F, (2, 1), 1, DEFAULT_MARGIN))
    assert sol.objective == pytest.approx(1.0 + DEFAULT_MARGIN, abs=1e-9)
    assert F.score(sol.x) >= DEFAULT_MARGIN - 1e-7


def grid_oracle(clf, x_hat, t, margin, step=1e-3):
    g = np.arange(0.0, 1.0 + step / 2, step)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    ok = (2 * t - 1) * clf.score(pts) >= margin
    if not ok.any():
        return np.inf
    return float(np.abs(pts[ok] - x_hat).sum(axis=1).min())


def random_instances(seed, count):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        clf = random_net(rng, 2, int(rng.integers(1, 5)), scale=2.0)
        x_hat = np.round(rng.uniform(size=2), 3)  # on the oracle grid
        t = 1 - clf.predict_class(x_hat)
        out.append((clf, x_hat, int(t)))
    return out


@pytest.mark.parametrize("case", range(50))
def test_milo_matches_grid_oracle(case):
    clf, x_hat, t = random_instances(2024, 50)[case]
    sol = solve_milo(MiloProblem(clf, x_hat, t, DEFAULT_MARGIN))
    ref = grid_oracle(clf, x_hat, t, DEFAULT_MARGIN)
    if np.isinf(ref):
        assert sol.status == "infeasible"
    else:
        assert sol.status == "optimal"
        assert abs(sol.objective - ref) <= 2e-3
        # feasibility of the returned point
        assert (2 * t - 1) * clf.score(sol.x) >= DEFAULT_MARGIN - 1e-7
        assert np.all(sol.x >= -1e-7) and np.all(sol.x <= 1 + 1e-7)


def test_milo_monotone_in_margin():
    for clf, x_hat, t in random_instances(7, 15):
        prev = -np.inf
        for theta in (0.0, 0.01, 0.1, 0.5, 1.0):
            sol = solve_milo(MiloProblem(clf, x_hat, t, theta))
            obj = sol.objective if sol.status == "optimal" else np.inf
            assert obj >= prev - 1e-9
            prev = obj


def test_milo_deterministic():
    for clf, x_hat, t in random_instances(11, 5):
        a = solve_milo(MiloProblem(clf, x_hat, t))
        b = solve_milo(MiloProblem(clf, x_hat, t))
        assert a.status == b.status and a.nodes == b.nodes
        assert (a.x is None and b.x is None) or a.x.tobytes() == b.x.tobytes()


def test_milo_node_limit_reports_gap():
    rng = np.random.default_rng(3)
    clf = random_net(rng, 4, 12, scale=2.0)
    x_hat = rng.uniform(size=4)
    t = 1 - clf.predict_class(x_hat)
    full = solve_milo(MiloProblem(clf, x_hat, t))
    capped = solve_milo(MiloProblem(clf, x_hat, t, node_limit=1))
    if full.nodes > 1:
        assert capped.status == "gap_limit"
        assert capped.bound <= full.objective + 1e-9


def test_armin_fixture(F):
    sol = solve_armin(F, [[2.0, 1.0], [1.0, 1.0]], 1, 0.0, np.zeros(2), np.full(2, 5.0))
    assert sol.status == "optimal"
    assert np.abs(sol.delta).sum() == pytest.approx(2.0, abs=1e-9)
    np.testing.assert_allclose(sol.x, np.array([2.0, 1.0]) + sol.delta)
    sol = solve_armin(F, [[2.0, 1.0], [1.0, 1.0]], 1, DEFAULT_MARGIN, np.zeros(2), np.full(2, 5.0))
    assert np.abs(sol.delta).sum() == pytest.approx(2.0 + DEFAULT_MARGIN, abs=1e-9)


def test_armin_reductions(F):
    one = solve_armin(F, [[2.0, 1.0]], 1, 0.0, np.zeros(2), np.full(2, 5.0))
    assert one.objective == pytest.approx(solve_milo(box5(F, (2, 1), 1)).objective)
    done = solve_armin(F, [[3.0, 3.0], [2.5, 2.5]], 1, 0.0, np.zeros(2), np.full(2, 5.0))
    assert done.objective == 0.0
    np.testing.assert_array_equal(done.delta, [0.0, 0.0])


def test_armin_dominates_mce():
    rng = np.random.default_rng(9)
    for _ in range(10):
        clf = random_net(rng, 3, 4, scale=2.0)
        x0 = rng.uniform(size=3)
        t = 1 - clf.predict_class(x0)
        comps = np.vstack([x0, np.clip(x0 + rng.normal(scale=0.1, size=(2, 3)), 0, 1)])
        a = solve_armin(clf, comps, t)
        m = solve_milo(MiloProblem(clf, x0, t))
        if a.status == "optimal":
            assert m.status == "optimal"
            assert a.objective >= m.objective - 1e-9
            pts = comps + a.delta
            assert np.all((2 * t - 1) * clf.score(pts) >= DEFAULT_MARGIN - 1e-7)


def test_milo_against_highs():
    scipy_opt = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(17)
    for _ in range(25):
        n = int(rng.integers(2, 6))
        clf = random_net(rng, n, int(rng.integers(2, 9)), scale=2.0)
        anchors = np.clip(rng.uniform(size=n) + rng.normal(scale=0.1, size=(int(rng.integers(1, 3)), n)), 0, 1)
        t = int(1 - clf.predict_class(anchors[0]))
        prob = MiloProblem(clf, anchors, t)
        enc = encode(prob)
        ours = solve_milo(prob)
        if enc is None:
            assert ours.status == "infeasible"
            continue
        k = len(enc.col_names)
        integrality = np.zeros(k)
        integrality[enc.z_cols] = 1
        ref = scipy_opt.milp(enc.lp.c[:k], integrality=integrality,
                             constraints=scipy_opt.LinearConstraint(enc.lp.A[:, :k], -np.inf, enc.lp.b),
                             bounds=scipy_opt.Bounds(enc.lp.lo[:k], enc.lp.hi[:k]),
                             options={"mip_rel_gap": 1e-10})
        if ref.status == 0:
            assert ours.status == "optimal"
            assert ours.objective == pytest.approx(ref.fun, abs=1e-6)
        else:
            assert ours.status == "infeasible"


def test_lp_text_dump(F):
    rng = np.random.default_rng(0)
    clf = random_net(rng, 2, 3)
    enc = encode(MiloProblem(clf, np.array([0.5, 0.5]), 1))
    text = to_lp_text(enc)
    assert text.startswith("\\ counterfactual\nMinimize\n obj: ")
    assert "Subject To" in text and "Bounds" in text and text.rstrip().endswith("End")
    assert text.count(" <= ") >= enc.n_rows
    if len(enc.z_cols):
        assert "Binaries" in text


def test_problem_validation(F):
    with pytest.raises(ValueError):
        MiloProblem(F, [1.0, 2.0, 3.0], 1)
    with pytest.raises(ValueError):
        MiloProblem(F, [1.0, 2.0], 1, margin=-1.0)
    with pytest.raises(ValueError):
        MiloProblem(F, [1.0, 2.0], 2)
