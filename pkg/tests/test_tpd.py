import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import lp_vertex_plan, mp_sinkhorn
from traco import tpd
from traco.errors import InvalidArgumentError, NumericError, ShapeError
from traco.numerics import Tape, Tensor, finite_diff_grad, relative_error
from traco.numerics import tensor as tn
from traco.tpd import DETACHED, Marginals, SinkhornConfig, sinkhorn

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def tight(eps: float, tol: float = 1e-10) -> SinkhornConfig:
    return SinkhornConfig(epsilon=eps, stop_tolerance=tol, max_iterations=100_000)


# -- config and marginals -----------------------------------------------------


def test_config_defaults():
    cfg = SinkhornConfig()
    assert (cfg.epsilon, cfg.max_iterations, cfg.stop_tolerance, cfg.differentiable) == (0.05, 1000, 0.005, "unrolled")


@pytest.mark.parametrize(
    "kwargs",
    [{"epsilon": 0}, {"max_iterations": 0}, {"stop_tolerance": -1}, {"differentiable": "sometimes"},
     {"scaling": 1.0}, {"relaxation": 2.0}],
)
def test_config_validation(kwargs):
    with pytest.raises(InvalidArgumentError):
        SinkhornConfig(**kwargs)


def test_uniform_marginals_valid():
    m = Marginals.uniform(5, 3)
    m.validate()
    assert abs(m.rows.sum() - 1) < 1e-12 and abs(m.cols.sum() - 1) < 1e-12


def test_zero_marginal_rejected():
    with pytest.raises(InvalidArgumentError):
        sinkhorn(SWAP, Marginals(np.array([0.5, 0.5]), np.array([1.0, 0.0])))


def test_marginal_shape_mismatch():
    with pytest.raises(ShapeError):
        sinkhorn(SWAP, Marginals.uniform(3, 2))


def test_nonfinite_cost():
    with pytest.raises(NumericError):
        sinkhorn(np.array([[0.0, np.inf], [1.0, 0.0]]))


# -- transport_cost ----------------------------------------------------------


def test_cost_coincident():
    t = np.random.default_rng(0).normal(size=(4, 3))
    assert not tpd.transport_cost(t, t).value.diagonal().any()


def test_cost_unit():
    c = tpd.transport_cost(np.array([[0.0, 1.0]]), np.array([[0.0]])).value
    assert c.shape == (2, 1) and c.ravel().tolist() == [0.0, 1.0]


def test_cost_three_four():
    assert tpd.transport_cost(np.array([[3.0], [4.0]]), np.zeros((2, 1))).value.item() == 25.0


def test_cost_dimension_mismatch():
    with pytest.raises(ShapeError):
        tpd.transport_cost(np.zeros((3, 2)), np.zeros((2, 2)))


# -- sinkhorn examples ------------------------------------------------------------


def test_zero_cost_is_independent():
    out = sinkhorn(np.zeros((2, 2)))
    np.testing.assert_allclose(out.plan, np.full((2, 2), 0.25), atol=1e-15)
    assert out.converged


def test_small_eps_is_near_vertex():
    out = sinkhorn(SWAP)
    assert out.plan[0, 1] < 1e-6 and out.plan[1, 0] < 1e-6
    np.testing.assert_allclose(np.diag(out.plan), 0.5, atol=SinkhornConfig().stop_tolerance)


def test_large_eps_matches_oracle():
    # exact diagonal is 1 / (2 (1 + e^-0.01)) = 0.25125, not quite uniform
    oracle = mp_sinkhorn(SWAP, [0.5, 0.5], [0.5, 0.5], 100)
    np.testing.assert_allclose(sinkhorn(SWAP, cfg=tight(100)).plan, oracle, atol=1e-12)
    assert abs(oracle[0, 0] - 1 / (2 * (1 + np.exp(-0.01)))) < 1e-15


def test_large_eps_tends_to_independence():
    epsilons = (1, 10, 100, 1000, 10_000)
    gaps = [np.abs(sinkhorn(SWAP, cfg=tight(e)).plan - 0.25).max() for e in epsilons]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    for e, gap in zip(epsilons, gaps):
        assert abs(gap - (1 / (2 * (1 + np.exp(-1 / e))) - 0.25)) < 1e-12


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("shape,eps", [((2, 2), 0.05), ((3, 3), 0.05), ((3, 3), 0.5), ((2, 3), 0.2)])
def test_matches_high_precision_oracle(seed, shape, eps):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0, 1, size=shape)
    cols = rng.dirichlet(np.ones(shape[1]) * 3)
    rows = np.full(shape[0], 1 / shape[0])
    oracle = mp_sinkhorn(c, rows, cols, eps)
    out = sinkhorn(c, Marginals(rows, cols / cols.sum()), tight(eps))
    assert np.abs(out.plan - oracle).max() < 1e-6


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("n", [2, 3])
def test_small_eps_matches_lp_vertex(seed, n):
    rng = np.random.default_rng(100 + seed)
    while True:
        c = rng.uniform(0, 1, size=(n, n))
        vertex, gap = lp_vertex_plan(c)
        # off-vertex mass decays like exp(-gap / eps)
        if gap > 0.15:
            break
    out = sinkhorn(c, cfg=tight(0.01, tol=1e-8))
    assert np.abs(out.plan - vertex).max() < 1e-4


def test_nonconvergence_returns_plan_with_warning(caplog):
    c = np.random.default_rng(0).uniform(0, 100, size=(30, 10))
    with caplog.at_level(logging.WARNING, logger="traco.tpd"):
        out = sinkhorn(c, cfg=SinkhornConfig(max_iterations=3))
    assert not out.converged and out.iterations == 3
    assert np.all(np.isfinite(out.plan))
    assert "marginal error" in caplog.text


# -- sinkhorn invariants -------------------------------------------------------------


@given(
    st.integers(1, 40), st.integers(1, 12), st.integers(0, 2**32 - 1), st.floats(0.0, 100.0),
)
def test_plan_invariants_random_costs(m, n, seed, scale):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0, scale, size=(m, n))
    out = sinkhorn(c)
    tol = SinkhornConfig().stop_tolerance
    assert out.converged
    assert np.abs(out.plan.sum(1) - 1 / m).sum() < tol
    assert np.abs(out.plan.sum(0) - 1 / n).sum() < tol
    assert out.plan.min() >= 0 and out.plan.max() <= 1


@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_shift_invariance(seed, shift):
    c = np.random.default_rng(seed).uniform(0, 10, size=(6, 4))
    np.testing.assert_allclose(sinkhorn(c + shift).plan, sinkhorn(c).plan, atol=1e-8)


def entropy(p):
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


@pytest.mark.parametrize("seed", range(20))
def test_entropy_grows_with_eps(seed):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0, 1, size=(rng.integers(2, 9), rng.integers(2, 6)))
    ents = [entropy(sinkhorn(c, cfg=tight(e, tol=1e-8)).plan) for e in (0.01, 0.05, 0.5, 5)]
    assert all(a <= b + 1e-12 for a, b in zip(ents, ents[1:]))


# -- tpd_loss and parent_of -----------------------------------------------------


def test_tpd_zero_cost():
    assert tpd.tpd_loss(np.zeros((2, 2)), np.full((2, 2), 0.25)).value == 0.0


def test_tpd_vertex_plan():
    assert tpd.tpd_loss(SWAP, np.diag([0.5, 0.5])).value == 0.0


def test_tpd_uniform_plan():
    assert tpd.tpd_loss(SWAP, np.full((2, 2), 0.25)).value == 0.5


def test_tpd_shape_mismatch():
    with pytest.raises(ShapeError):
        tpd.tpd_loss(np.zeros((2, 2)), np.zeros((2, 3)))


def test_parent_of_examples():
    assert tpd.parent_of(np.diag([0.5, 0.5])).tolist() == [0, 1]
    assert tpd.parent_of(np.full((1, 3), 1 / 3)).tolist() == [0]
    assert tpd.parent_of(np.array([[0.1, 0.4], [0.3, 0.2]])).tolist() == [1, 0]


# -- gradients ------------------------------------------------------------------


def pipeline_loss(cfg, t_parent, mode_detached=False):
    """cost -> plan -> tpd as a function of the child embeddings."""

    def fn(t_child):
        cost = tpd.transport_cost(t_child, t_parent)
        if mode_detached:
            plan = sinkhorn(cost.value, cfg=cfg).plan
        else:
            plan = sinkhorn(cost, cfg=cfg)
        return tpd.tpd_loss(cost, plan)

    return fn


def grad_of(fn, x):
    t = Tensor(x, requires_grad=True)
    with Tape() as tape:
        out = fn(t)
    return tape.gradient(out, [t])[0]


# a fixed sweep count keeps the unrolled map smooth; a cost spread below
# epsilon keeps the annealing schedule to a single stage
FIXED = SinkhornConfig(epsilon=0.5, stop_tolerance=1e-300, max_iterations=200)


def small_embeddings(seed, d=3, k_child=3, k_parent=2, scale=0.1):
    rng = np.random.default_rng(seed)
    return rng.normal(0, scale, size=(d, k_child)), rng.normal(0, scale, size=(d, k_parent))


@pytest.mark.filterwarnings("ignore")
@pytest.mark.parametrize("seed", range(5))
def test_unrolled_gradient_matches_fd(seed, caplog):
    child, parent = small_embeddings(seed)
    assert np.ptp(tpd.transport_cost(child, parent).value) < FIXED.epsilon
    fn = pipeline_loss(FIXED, parent)
    with caplog.at_level(logging.ERROR, logger="traco.tpd"):
        analytic = grad_of(fn, child)
        numeric = finite_diff_grad(lambda x: float(fn(Tensor(x)).value), child, 1e-4)
    assert relative_error(analytic, numeric) < 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_detached_gradient_matches_fd(seed):
    child, parent = small_embeddings(seed, scale=1.0)
    cfg = SinkhornConfig(epsilon=0.5, differentiable=DETACHED)
    plan = sinkhorn(tpd.transport_cost(child, parent).value, cfg=cfg).plan

    # detached convention: the plan is a constant of the differentiation
    def fn(t):
        return tpd.tpd_loss(tpd.transport_cost(t, parent), plan)

    analytic = grad_of(fn, child)
    numeric = finite_diff_grad(lambda x: float(fn(Tensor(x)).value), child, 1e-4)
    assert relative_error(analytic, numeric) < 1e-4


def test_converged_unrolled_gradient_matches_fd(caplog):
    # with a tight tolerance the iteration count is effectively fixed as well
    child, parent = small_embeddings(7)
    cfg = SinkhornConfig(epsilon=0.5, stop_tolerance=1e-14, max_iterations=5000)
    fn = pipeline_loss(cfg, parent)
    analytic = grad_of(fn, child)
    numeric = finite_diff_grad(lambda x: float(fn(Tensor(x)).value), child, 1e-4)
    assert relative_error(analytic, numeric) < 1e-3


def naive_unrolled(cost, cfg, n_iter):
    """Per-operation tape version of the same relaxed log-domain sweeps."""
    m, n = cost.shape
    log_a, log_b = np.log(np.full(m, 1 / m)), np.log(np.full(n, 1 / n))
    # subtract the minimum entry as a tracked value, like the solver does
    cs = cost - tn.reshape(cost, (m * n,))[int(np.argmin(cost.value))]
    eps, w = cfg.epsilon, cfg.relaxation
    f, g = Tensor(np.zeros(m)), Tensor(np.zeros(n))
    for _ in range(n_iter):
        f = f * (1 - w) + (log_a - tn.logsumexp((tn.reshape(g, (1, n)) - cs) * (1 / eps), axis=1)) * (w * eps)
        g = g * (1 - w) + (log_b - tn.logsumexp((tn.reshape(f, (m, 1)) - cs) * (1 / eps), axis=0)) * (w * eps)
    return tn.exp((tn.reshape(f, (m, 1)) + tn.reshape(g, (1, n)) - cs) * (1 / eps))


@pytest.mark.parametrize("seed", range(4))
def test_fused_backward_equals_per_op_tape(seed, caplog):
    rng = np.random.default_rng(seed)
    c = rng.uniform(0, 0.4, size=(5, 3))
    weights = rng.normal(size=(5, 3))
    grads = []
    for build in (lambda t: sinkhorn(t, cfg=FIXED).tensor, lambda t: naive_unrolled(t, FIXED, FIXED.max_iterations)):
        t = Tensor(c, requires_grad=True)
        with Tape() as tape:
            out = (build(t) * weights).sum()
        grads.append(tape.gradient(out, [t])[0])
    np.testing.assert_allclose(grads[0], grads[1], atol=1e-12, rtol=1e-9)


def test_learnable_column_gradient(caplog):
    rng = np.random.default_rng(3)
    c = rng.uniform(0, 0.4, size=(4, 3))
    weights = rng.normal(size=(4, 3))

    def fn(logits):
        return (sinkhorn(c, cfg=FIXED, cols=tn.softmax(logits)).tensor * weights).sum()

    x = np.array([0.2, -0.1, 0.3])
    analytic = grad_of(fn, x)

    def value(v):
        return float((sinkhorn(c, cfg=FIXED, cols=tn.softmax_stable(v)).plan * weights).sum())

    assert relative_error(analytic, finite_diff_grad(value, x, 1e-5)) < 1e-4


def test_untracked_solve_has_no_tensor():
    assert sinkhorn(SWAP).tensor is None
    with Tape():
        assert sinkhorn(Tensor(SWAP)).tensor is None
        assert sinkhorn(Tensor(SWAP, requires_grad=True)).tensor is not None
