import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cxbench.data import split, synth_blobs
from cxbench.explainers import (
    APAS_DEFAULTS, ARMIN, DEFAULT_PARAMS, INFEASIBLE, MCE, MCER, METHODS, NOT_CONVERGED,
    NON_ROBUST_METHODS, ROBUST_METHODS, VALID, Certified, Ensemble, MethodContext, Stable,
    TrainingPool, WachterParams, apas, bls, explain, in_hull, method_params, milo_explain,
    nnce, project_simplex, proplace, wachter,
)
from cxbench.model import Classifier, TrainConfig, score_gradient, sigmoid, train
from cxbench.robustness import ModelSet, StabilityParams, certify, sample_models, stability_score
from cxbench.solver import DEFAULT_MARGIN, MiloProblem, solve_milo

from conftest import random_net

BOX5 = dict(box_lo=np.zeros(2), box_hi=np.full(2, 5.0))


@pytest.fixture(scope="module")
def trained():
    sp = split(synth_blobs(300, 3, 2.5, 8), 8)
    clf = train(sp.train, TrainConfig(hidden_width=8, epochs=60, seed=2))
    return clf, sp


def test_method_groups():
    assert set(ROBUST_METHODS) | set(NON_ROBUST_METHODS) == set(METHODS)
    assert not set(ROBUST_METHODS) & set(NON_ROBUST_METHODS)
    assert set(DEFAULT_PARAMS) == set(METHODS)


def test_method_params_overrides():
    p = method_params("wachter", {"lr": 0.5})
    assert p["lr"] == 0.5 and p["lam"] == 0.9
    with pytest.raises(KeyError):
        method_params("wachter", {"learning_rate": 0.5})
    with pytest.raises(KeyError):
        method_params("gradient")


# ---------------------------------------------------------------------------
# wachter / apas

def test_wachter_params_validation():
    with pytest.raises(ValueError):
        WachterParams(lam=1.5)
    with pytest.raises(ValueError):
        WachterParams(eps=0.0)
    with pytest.raises(ValueError):
        WachterParams(lr=-1.0)


def test_wachter_already_valid(F):
    x = np.array([4.0, 4.0])
    e = wachter(F, x, 1, WachterParams(eps=0.01))
    assert e.status == VALID and e.info["iterations"] == 0
    np.testing.assert_array_equal(e.delta, [0.0, 0.0])


def _reference_descent(clf, x_hat, t, lam, eps, lr, max_iter, lo, hi):
    """Plain re-implementation of the descent on the widened box."""
    x = x_hat.copy()
    for it in range(max_iter + 1):
        p = sigmoid(clf.score(x))
        if (p >= 0.5 + eps) if t == 1 else (p <= 0.5 - eps):
            return x, it
        if it == max_iter:
            return None, it
        g = (1 - lam) * 2 * (p - t) * p * (1 - p) * score_gradient(clf, x) + lam * np.sign(x - x_hat)
        x = np.clip(x - lr * g, lo, hi)


def test_wachter_matches_reference_on_fixture(F):
    # the widened box is emulated by rescaling the fixture onto the unit square
    G = Classifier([[5.0, 5.0]], [0.0], [1.0], -4.0)  # G(u) = F(5u)
    x_hat = np.array([2.0, 1.0]) / 5
    e = wachter(G, x_hat, 1, WachterParams(lam=0.0, eps=0.01, lr=0.5, max_iter=500))
    assert e.status == VALID
    assert e.info["iterations"] <= 500
    assert 5 * e.x.sum() > 4
    ref, it = _reference_descent(G, x_hat, 1, 0.0, 0.01, 0.5, 500, 0.0, 1.0)
    assert it == e.info["iterations"]
    np.testing.assert_allclose(e.x, ref, atol=1e-12)


def test_wachter_matches_reference_on_random_nets():
    rng = np.random.default_rng(3)
    for _ in range(30):
        clf = random_net(rng, 3, 5)
        x_hat = rng.uniform(size=3)
        t = 1 - clf.predict_class(x_hat)
        lam, lr = float(rng.uniform(0, 0.5)), float(rng.uniform(0.01, 0.5))
        e = wachter(clf, x_hat, t, WachterParams(lam, 0.01, lr, 300))
        ref, it = _reference_descent(clf, x_hat, t, lam, 0.01, lr, 300, 0.0, 1.0)
        if ref is None:
            assert e.status == NOT_CONVERGED
        else:
            assert e.status == VALID and it == e.info["iterations"]
            np.testing.assert_allclose(e.x, ref, atol=1e-9)


def test_wachter_can_fail_and_reports_best_iterate():
    # a dead region: every unit inactive around x_hat, so the gradient vanishes
    clf = Classifier([[1.0, 0.0]], [-0.8], [1.0], -0.05)
    x_hat = np.array([0.1, 0.5])
    e = wachter(clf, x_hat, 1, WachterParams(lam=0.5, eps=0.01, lr=0.1, max_iter=50))
    assert e.status == NOT_CONVERGED
    assert e.x is not None
    np.testing.assert_array_equal(e.delta, e.x - e.x_hat)


def test_apas_single_member_equals_wachter(trained):
    clf, sp = trained
    p = WachterParams(lam=0.1, eps=0.05, lr=0.05, max_iter=300)
    for x in sp.test.features[:20]:
        t = 1 - clf.predict_class(x)
        a = apas(clf, x, t, ModelSet("sampled", [clf]), p)
        w = wachter(clf, x, t, p)
        assert a.status == w.status
        assert a.x.tobytes() == w.x.tobytes()


def test_apas_radius_zero_equals_single_member(trained):
    clf, sp = trained
    zero = sample_models(clf, 6, 0.0, 3)
    for x in sp.test.features[:20]:
        t = 1 - clf.predict_class(x)
        a = apas(clf, x, t, zero)
        b = apas(clf, x, t, ModelSet("sampled", [clf]))
        assert a.x.tobytes() == b.x.tobytes() and a.status == b.status


def test_apas_valid_means_every_member_agrees(trained):
    clf, sp = trained
    ms = sample_models(clf, 20, 0.05, 1)
    n_valid = 0
    for x in sp.test.features[:40]:
        t = 1 - clf.predict_class(x)
        e = apas(clf, x, t, ms)
        if e.status == VALID:
            n_valid += 1
            assert all(m.predict_class(e.x) == t for m in ms)
            assert all((sigmoid(m.score(e.x)) >= 0.5 + APAS_DEFAULTS.eps) == (t == 1) for m in ms)
    assert n_valid >= 30


def test_apas_normalized_steps_have_fixed_length():
    clf = Classifier([[3.0, 4.0]], [0.0], [1.0], -20.0)  # saturated far from the boundary
    x_hat = np.array([0.1, 0.1])
    p = WachterParams(lam=0.0, eps=0.1, lr=0.01, max_iter=1, normalize=True)
    e = apas(clf, x_hat, 1, ModelSet("sampled", [clf]), p)
    np.testing.assert_allclose(e.x - x_hat, [0.006, 0.008], atol=1e-12)
    plain = apas(clf, x_hat, 1, ModelSet("sampled", [clf]), WachterParams(0.0, 0.1, 0.01, 1))
    assert np.abs(plain.x - x_hat).sum() < 1e-6  # the saturated sigmoid barely moves plain steps


# ---------------------------------------------------------------------------
# training-data methods

def test_nnce_single_candidate(F):
    e = nnce(F, np.array([[0.0, 0.0], [5.0, 5.0]]), np.array([2.0, 1.0]), 1)
    assert e.status == VALID
    np.testing.assert_array_equal(e.x, [5.0, 5.0])


def test_nnce_certified_skips_boundary_point(F):
    train_X = np.array([[2.0, 2.0], [3.0, 3.0]])
    x_hat = np.array([2.0, 1.0])
    plain = nnce(F, train_X, x_hat, 1)
    np.testing.assert_array_equal(plain.x, [2.0, 2.0])
    robust = nnce(F, train_X, x_hat, 1, Certified(0.1))
    assert certify(F, robust.x, 1, 0.1) and not certify(F, train_X[0], 1, 0.1)
    np.testing.assert_array_equal(robust.x, [3.0, 3.0])


def test_nnce_infeasible(F):
    e = nnce(F, np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.5, 0.5]), 1)
    assert e.status == INFEASIBLE and e.x is None and e.delta is None


def test_nnce_filters_never_shrink_distance(trained):
    clf, sp = trained
    pool = TrainingPool(clf, sp.train.features)
    ens = sample_models(clf, 5, 0.1, 2)
    filters = [Certified(0.05), Ensemble(ens), Stable(StabilityParams(), 0)]
    for x in sp.test.features[:30]:
        t = 1 - clf.predict_class(x)
        base = nnce(clf, pool, x, t)
        d0 = np.abs(base.delta).sum()
        for f in filters:
            e = nnce(clf, pool, x, t, f)
            if e.status == VALID:
                assert np.abs(e.delta).sum() >= d0 - 1e-12
                # the result is an actual training row
                assert any(np.array_equal(e.x, r) for r in sp.train.features)


def test_nnce_filter_semantics(trained):
    clf, sp = trained
    pool = TrainingPool(clf, sp.train.features)
    ens = sample_models(clf, 5, 0.1, 2)
    sp_params = StabilityParams(threshold=0.7)
    for x in sp.test.features[:10]:
        t = 1 - clf.predict_class(x)
        e = nnce(clf, pool, x, t, Ensemble(ens))
        assert all(m.predict_class(e.x) == t for m in ens)
        e = nnce(clf, pool, x, t, Stable(sp_params, 4))
        row = e.info["row"]
        assert stability_score(clf, e.x, sp_params, 4 + row, t) >= 0.7


def test_bls_examples(F):
    train_X = np.array([[4.0, 3.0]])
    e = bls(F, train_X, np.array([2.0, 1.0]), 1, seed=0, margin=0.0)
    assert e.status == VALID
    assert F.predict_class(e.x) == 1
    assert e.info["alpha"] == pytest.approx(0.25, abs=1e-6)
    assert e.x.sum() == pytest.approx(4.0, abs=1e-5)
    assert np.abs(e.delta).sum() <= np.abs(train_X[0] - [2.0, 1.0]).sum()
    same = bls(F, train_X, np.array([3.0, 3.0]), 1)
    np.testing.assert_array_equal(same.delta, [0.0, 0.0])
    assert bls(F, np.array([[0.0, 0.0]]), np.array([1.0, 1.0]), 1).status == INFEASIBLE


def test_bls_margin(F):
    e = bls(F, np.array([[4.0, 3.0]]), np.array([2.0, 1.0]), 1, margin=DEFAULT_MARGIN)
    assert F.score(e.x) >= DEFAULT_MARGIN


def test_project_simplex():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v = rng.normal(size=int(rng.integers(1, 8))) * 3
        w = project_simplex(v)
        assert w.min() >= 0 and w.sum() == pytest.approx(1.0)
        # optimality: no feasible vertex direction improves the distance
        for i in range(len(v)):
            e = np.zeros(len(v))
            e[i] = 1.0
            assert np.sum((w - v) ** 2) <= np.sum((e - v) ** 2) + 1e-9


def test_in_hull():
    V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert in_hull(V, [0.2, 0.2])
    assert not in_hull(V, [0.8, 0.8])


def test_proplace_single_vertex(trained):
    clf, sp = trained
    pool = TrainingPool(clf, sp.train.features)
    for x in sp.test.features[:10]:
        t = 1 - clf.predict_class(x)
        e = proplace(clf, pool, x, t, 0.05, k=1)
        near = nnce(clf, pool, x, t, Certified(0.05))
        np.testing.assert_array_equal(e.x, near.x)


def test_proplace_inside_hull_is_free(F):
    train_X = np.array([[3.0, 3.0], [4.0, 3.0], [3.0, 4.0], [4.0, 4.0]])
    x_hat = np.array([3.5, 3.5])
    e = proplace(F, train_X, x_hat, 1, 0.05, k=4)
    assert np.abs(e.delta).sum() == 0.0


def test_proplace_never_worse_than_rnce_and_certified(trained):
    clf, sp = trained
    pool = TrainingPool(clf, sp.train.features)
    for x in sp.test.features[:30]:
        t = 1 - clf.predict_class(x)
        e = proplace(clf, pool, x, t, 0.05, k=10)
        r = nnce(clf, pool, x, t, Certified(0.05))
        assert e.status == r.status
        if e.status == VALID:
            assert certify(clf, e.x, t, 0.05)
            assert np.abs(e.delta).sum() <= np.abs(r.delta).sum() + 1e-9


# ---------------------------------------------------------------------------
# solver-backed methods

def test_mce_fixture(F):
    e = milo_explain(F, np.array([2.0, 1.0]), 1, MCE(), **BOX5)
    assert e.status == VALID
    assert np.abs(e.delta).sum() == pytest.approx(1.0 + DEFAULT_MARGIN, abs=1e-9)
    assert e.info["solver_status"] == "optimal"


def test_mcer_radius_zero_is_mce(trained):
    clf, sp = trained
    for x in sp.test.features[:10]:
        t = 1 - clf.predict_class(x)
        a = milo_explain(clf, x, t, MCE())
        b = milo_explain(clf, x, t, MCER(radius=0.0))
        assert a.x.tobytes() == b.x.tobytes()


def test_mcer_costs_more_and_is_certified(trained):
    clf, sp = trained
    for x in sp.test.features[:15]:
        t = 1 - clf.predict_class(x)
        a = milo_explain(clf, x, t, MCE())
        b = milo_explain(clf, x, t, MCER(radius=0.05))
        if b.status == VALID:
            assert certify(clf, b.x, t, 0.05)
            assert np.abs(b.delta).sum() >= np.abs(a.delta).sum() - 1e-9


def test_mcer_finds_smallest_certified_margin(trained):
    clf, sp = trained
    mode = MCER(radius=0.05)
    for x in sp.test.features[:6]:
        t = 1 - clf.predict_class(x)
        e = milo_explain(clf, x, t, mode)
        if e.status != VALID or e.info["theta"] == mode.margin:
            continue
        below = e.info["theta"] - mode.tol
        sol = solve_milo(MiloProblem(clf, x, t, below))
        assert sol.found and not certify(clf, sol.x, t, mode.radius)


def test_mcer_infeasible_when_nothing_certifies(F):
    e = milo_explain(F, np.array([0.5, 0.5]), 1, MCER(radius=0.1))
    assert e.status == INFEASIBLE


def test_armin_fixture_method(F):
    e = milo_explain(F, np.array([2.0, 1.0]), 1, ARMIN(((2.0, 1.0), (1.0, 1.0))), **BOX5)
    assert e.status == VALID
    assert np.abs(e.delta).sum() == pytest.approx(2.0 + DEFAULT_MARGIN, abs=1e-9)
    np.testing.assert_array_equal(e.x_hat, [2.0, 1.0])


# ---------------------------------------------------------------------------
# contracts across every method

@pytest.fixture(scope="module")
def context(trained):
    clf, sp = trained
    pool = TrainingPool(clf, sp.train.features)
    return MethodContext(clf, pool, {}, seed=3)


@pytest.mark.parametrize("method", METHODS)
def test_valid_means_predicted_target_and_delta_identity(method, context, trained):
    clf, sp = trained
    for i, x in enumerate(sp.test.features[:25]):
        t = int(1 - clf.predict_class(x))
        comps = None
        if method == "armin":
            comps = [x, np.clip(x + 0.02, 0, 1)]
        e = explain(method, context, x, t, seed=i, completions=comps)
        assert e.method == method and e.target == t
        if e.x is not None:
            assert np.array_equal(e.delta, e.x - e.x_hat)
            assert np.all(e.x >= 0) and np.all(e.x <= 1)
        if e.status == VALID:
            assert clf.predict_class(e.x) == t
        if method not in ("wachter", "apas"):
            assert e.status in (VALID, INFEASIBLE)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_valid_contract_on_random_nets(seed):
    rng = np.random.default_rng(seed)
    clf = random_net(rng, 3, 4, scale=2.0)
    X = rng.uniform(size=(40, 3))
    ctx = MethodContext(clf, TrainingPool(clf, X), {}, seed=seed)
    x = rng.uniform(size=3)
    t = int(1 - clf.predict_class(x))
    for method in METHODS:
        e = explain(method, ctx, x, t, seed=seed)
        if e.status == VALID:
            assert clf.predict_class(e.x) == t
            assert np.array_equal(e.delta, e.x - e.x_hat)


def test_explain_unknown_method(context, trained):
    with pytest.raises(KeyError):
        explain("gradient", context, trained[1].test.features[0], 1)


def test_stce_ensemble_filter_needs_factory(trained):
    clf, sp = trained
    ctx = MethodContext(clf, TrainingPool(clf, sp.train.features),
                        {"stce": method_params("stce", {"filter": "ensemble"})})
    with pytest.raises(ValueError):
        ctx.stce_filter()
