"""Transport-plan dependencies between adjacent topic levels.

Child topics (level l+1) carry uniform mass 1/K_child, parent topics (level l)
carry mass ``s``. The entropic OT plan between them is the dependency matrix,
and the cost-weighted plan is the regularizer that pulls each child embedding
toward its parent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericError, ShapeError
from .numerics import tensor as tn
from .numerics.tensor import Tensor

log = logging.getLogger(__name__)

UNROLLED = "unrolled"
DETACHED = "detached"

# intermediate annealing stages stop at this fraction of the final tolerance,
# but never tighter than STAGE_FLOOR: they only warm-start the next stage
STAGE_TOLERANCE = 0.1
STAGE_FLOOR = 1e-6


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 0.05
    max_iterations: int = 1000
    stop_tolerance: float = 0.005
    differentiable: str = UNROLLED
    # geometric factor for annealing epsilon down from the cost range
    scaling: float = 0.5
    # over-relaxation weight on potential updates; 1.0 is the plain scheme
    relaxation: float = 1.8

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be positive, got {self.epsilon}")
        if self.max_iterations < 1:
            raise InvalidArgumentError("max_iterations must be at least 1")
        if not self.stop_tolerance > 0:
            raise InvalidArgumentError("stop_tolerance must be positive")
        if self.differentiable not in (UNROLLED, DETACHED):
            raise InvalidArgumentError(
                f"differentiable must be {UNROLLED!r} or {DETACHED!r}, got {self.differentiable!r}"
            )
        if not 0 < self.scaling < 1:
            raise InvalidArgumentError("scaling must lie in (0, 1)")
        if not 0 < self.relaxation < 2:
            raise InvalidArgumentError("relaxation must lie in (0, 2)")


@dataclass(frozen=True)
class Marginals:
    rows: np.ndarray
    cols: np.ndarray

    @classmethod
    def uniform(cls, n_children: int, n_parents: int) -> "Marginals":
        return cls(np.full(n_children, 1.0 / n_children), np.full(n_parents, 1.0 / n_parents))

    def validate(self) -> None:
        for name, m in (("row", self.rows), ("column", self.cols)):
            if m.ndim != 1 or m.size == 0:
                raise ShapeError(f"{name} marginal must be a nonempty vector")
            if np.any(m <= 0):
                raise InvalidArgumentError(f"{name} marginal has a nonpositive entry")
            if abs(m.sum() - 1.0) > 1e-12:
                raise InvalidArgumentError(f"{name} marginal sums to {m.sum()!r}, not 1")


@dataclass
class DependencyMatrix:
    """A Sinkhorn plan plus convergence diagnostics.

    ``tensor`` is set when the plan was computed on an active tape and can
    carry gradients back to the cost.
    """

    plan: np.ndarray
    iterations: int
    row_error: float
    col_error: float
    converged: bool
    tensor: Tensor | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.plan.shape


def transport_cost(t_child, t_parent) -> Tensor:
    """Squared Euclidean distance between every child and parent topic embedding.

    Embeddings are D x K column matrices; the result is K_child x K_parent.
    """
    return tn.pairwise_sq_dist(t_child, t_parent)


def _lse(a: np.ndarray, axis: int, keepdims: bool = False) -> np.ndarray:
    # plain numpy: this sits in the innermost loop, where call overhead matters
    top = a.max(axis=axis, keepdims=True)
    out = top + np.log(np.exp(a - top).sum(axis=axis, keepdims=True))
    return out if keepdims else out.squeeze(axis)


def _softmax(a: np.ndarray, axis: int) -> np.ndarray:
    return np.exp(a - _lse(a, axis, keepdims=True))


def _eps_schedule(spread: float, eps_target: float, scaling: float) -> list[float]:
    schedule = [eps_target]
    while schedule[-1] < spread:
        schedule.append(schedule[-1] / scaling)
    return schedule[::-1]


def sinkhorn(cost, marginals: Marginals | None = None, cfg: SinkhornConfig = SinkhornConfig(), cols=None) -> DependencyMatrix:
    """Entropic OT plan for ``cost`` via log-domain Sinkhorn iterations.

    The potentials are updated with log-sum-exp sweeps (row scaling then column
    scaling). When the cost range exceeds ``epsilon`` the regularization is
    annealed geometrically from the range down to ``epsilon``, warm-starting
    each stage; this reaches the same fixed point in far fewer sweeps. With
    ``relaxation`` above 1 each potential moves past its plain update by that
    factor (the fixed point is unchanged). All sweeps, across stages, count
    toward ``max_iterations``. Convergence is the L1 deviation of the row sums
    from their targets after a full sweep (and of the column sums as well
    when relaxed, since the column update is then no longer exact). A relaxed
    solve ends with one extra plain sweep, which leaves the column sums exact.

    ``cols`` optionally overrides the column marginal with a Tensor (a
    learnable parent weighting); its values must still be a valid simplex.
    If ``cost`` (or ``cols``) is tracked on an active tape, the whole solve is
    recorded as one node whose backward pass replays every sweep in reverse,
    so ``tensor`` carries exact gradients of the unrolled iterations.
    """
    cost_t = tn.as_tensor(cost)
    c = cost_t.value
    if c.ndim != 2 or c.size == 0:
        raise ShapeError(f"cost must be a nonempty matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise NumericError("cost matrix contains non-finite entries")
    m, n = c.shape
    if marginals is None:
        marginals = Marginals.uniform(m, n)
    cols_t = None
    if cols is not None:
        cols_t = tn.as_tensor(cols)
        marginals = Marginals(marginals.rows, np.asarray(cols_t.value))
    marginals.validate()
    if marginals.rows.shape != (m,) or marginals.cols.shape != (n,):
        raise ShapeError(
            f"marginals {marginals.rows.shape}/{marginals.cols.shape} do not fit cost {c.shape}"
        )

    rows, col_target = marginals.rows, marginals.cols
    log_a, log_b = np.log(rows), np.log(col_target)
    omega = cfg.relaxation
    # shift-invariance: the plan does not depend on a constant offset of the cost
    low = int(np.argmin(c))
    cs = c - c.flat[low]
    schedule = _eps_schedule(float(cs.max()), cfg.epsilon, cfg.scaling)

    f, g = np.zeros(m), np.zeros(n)
    trace: list[tuple[float, float, np.ndarray, np.ndarray, np.ndarray]] = []
    it = 0

    def sweep(eps: float, w: float) -> None:
        nonlocal f, g
        f_new = (1 - w) * f + w * eps * (log_a - _lse((g[None, :] - cs) / eps, 1))
        g_new = (1 - w) * g + w * eps * (log_b - _lse((f_new[:, None] - cs) / eps, 0))
        trace.append((eps, w, f, g, f_new))
        f, g = f_new, g_new
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise NumericError(f"Sinkhorn potentials became non-finite at iteration {len(trace)}")

    eps = schedule[-1]
    final = False
    for stage, eps in enumerate(schedule):
        final = stage == len(schedule) - 1
        tol = cfg.stop_tolerance if final else max(cfg.stop_tolerance * STAGE_TOLERANCE, STAGE_FLOOR)
        # potentials are carried across stages in absolute (cost) units
        while it < cfg.max_iterations:
            it += 1
            sweep(eps, omega)
            plan = np.exp((f[:, None] + g[None, :] - cs) / eps)
            err = float(np.abs(plan.sum(axis=1) - rows).sum())
            if omega != 1.0:
                # relaxed column updates no longer hit the column marginal exactly
                err = max(err, float(np.abs(plan.sum(axis=0) - col_target).sum()))
            if err < tol:
                break
        if final or it >= cfg.max_iterations:
            break
    if omega != 1.0:
        # one closing plain sweep: exact column sums, and no overshoot left over
        sweep(eps, 1.0)

    plan = np.exp((f[:, None] + g[None, :] - cs) / eps)
    if not np.all(np.isfinite(plan)):
        raise NumericError(f"Sinkhorn plan became non-finite at iteration {it}")
    row_err = float(np.abs(plan.sum(axis=1) - rows).sum())
    col_err = float(np.abs(plan.sum(axis=0) - col_target).sum())
    # a solve cut off before the last annealing stage solved a larger epsilon
    converged = final and max(row_err, col_err) < cfg.stop_tolerance
    if not converged:
        log.warning(
            "Sinkhorn stopped after %d iterations at epsilon %.3g with row marginal error %.3g (tolerance %.3g)",
            it, eps, row_err, cfg.stop_tolerance,
        )

    final_eps = eps

    def vjp(g_plan):
        # reverse sweep through the recorded iterations
        dz = g_plan * plan
        df, dg = dz.sum(axis=1) / final_eps, dz.sum(axis=0) / final_eps
        dcs = -dz / final_eps
        dlog_b = np.zeros(n)
        for eps_t, w, f_old, g_old, f_new in reversed(trace):
            dg_hat = w * dg
            dlog_b += eps_t * dg_hat
            w_b = _softmax((f_new[:, None] - cs) / eps_t, 0)
            d_b = w_b * (-dg_hat)[None, :]
            df = df + d_b.sum(axis=1)
            dcs -= d_b
            dg = (1 - w) * dg
            df_hat = w * df
            w_a = _softmax((g_old[None, :] - cs) / eps_t, 1)
            d_a = w_a * (-df_hat)[:, None]
            dg = dg + d_a.sum(axis=0)
            dcs -= d_a
            df = (1 - w) * df
        dc = dcs.copy()
        dc.flat[low] -= dcs.sum()
        d_cols = dlog_b / col_target
        return (dc, d_cols if cols_t is not None else None)

    inputs = (cost_t, cols_t if cols_t is not None else Tensor(col_target))
    plan_t = tn._make(plan, inputs, vjp)
    return DependencyMatrix(
        plan=plan,
        iterations=it,
        row_error=row_err,
        col_error=col_err,
        converged=converged,
        tensor=plan_t if plan_t.requires_grad else None,
    )


def tpd_loss(cost, plan) -> Tensor:
    """Cost-weighted sum of the plan entries.

    Pass the plan as a Tensor to differentiate through it, or as a plain array
    (or a ``DependencyMatrix`` without a tensor) to treat it as constant.
    """
    if isinstance(plan, DependencyMatrix):
        plan = plan.tensor if plan.tensor is not None else plan.plan
    cost = tn.as_tensor(cost)
    plan = tn.as_tensor(plan)
    if cost.shape != plan.shape:
        raise ShapeError(f"cost shape {cost.shape} != plan shape {plan.shape}")
    return (cost * plan).sum()


def parent_of(plan) -> np.ndarray:
    """Index of the strongest parent for each child row (lowest index on ties)."""
    if isinstance(plan, DependencyMatrix):
        plan = plan.plan
    plan = np.asarray(plan)
    return np.argmax(plan, axis=1)
