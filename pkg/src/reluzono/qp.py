"""
Interior point engines.

`solve_qp` is a Mehrotra predictor-corrector method for

    minimize  1/2 x.Q x + q.x   subject to  G x >= h

followed by an active-set polish step that solves the KKT system of the
constraints the interior point iterate identifies as tight. When the
interior point method stalls or the polish cannot confirm its active set,
`solve_qp_active_set`, a primal active-set method, finishes the job.

With Q = 0 `solve_qp` is an LP solver, which the tests use to cross-check
the simplex engine.

`minimize_barrier` is a log-barrier method with damped Newton steps for
any smooth convex objective under the same kind of constraints plus an
optional box, used for the logistic loss.

Neither engine touches G directly. They go through a `ConstraintOperator`,
so the region problems (block diagonal, one block per hidden unit) never
build the m*N x m*p constraint matrix.
"""
import abc
import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .config import settings
from .errors import SolverStall
from .lp import solve_lp

logger = logging.getLogger(__name__)

# regularization added to the Newton matrix only, never to the objective
NEWTON_RIDGE = 1e-10
STEP_FRACTION = 0.995


class ConstraintOperator(abc.ABC):
    """
    The linear map x -> G x of a constraint system G x >= h.

    Implementations only need the products an interior point method uses.
    """

    @property
    @abc.abstractmethod
    def shape(self) -> tuple[int, int]:
        """(number of constraints, number of variables)"""

    @abc.abstractmethod
    def apply(self, x: np.ndarray) -> np.ndarray:
        """G x"""

    @abc.abstractmethod
    def apply_t(self, y: np.ndarray) -> np.ndarray:
        """G^T y"""

    @abc.abstractmethod
    def weighted_gram(self, weights: np.ndarray) -> np.ndarray:
        """G^T diag(weights) G, as a dense matrix."""

    @abc.abstractmethod
    def rows(self, index: np.ndarray) -> np.ndarray:
        """The selected rows of G, dense."""


class DenseConstraints(ConstraintOperator):
    def __init__(self, G: np.ndarray):
        self.G = np.atleast_2d(np.asarray(G, dtype=float))

    @property
    def shape(self) -> tuple[int, int]:
        return self.G.shape[0], self.G.shape[1]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.G @ x

    def apply_t(self, y: np.ndarray) -> np.ndarray:
        return self.G.T @ y

    def weighted_gram(self, weights: np.ndarray) -> np.ndarray:
        return self.G.T @ (weights[:, None] * self.G)

    def rows(self, index: np.ndarray) -> np.ndarray:
        return self.G[index]


def _step_to_boundary(z: np.ndarray, dz: np.ndarray) -> float:
    neg = dz < 0
    if not neg.any():
        return 1.0
    # a denormal dz overflows the ratio; inf is the right answer there
    with np.errstate(over="ignore"):
        ratios = z[neg] / -dz[neg]
    return float(min(1.0, np.min(ratios)))


def _solve_newton(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(K, rhs, rcond=None)[0]


@dataclass(frozen=True)
class QPResult:
    x: np.ndarray
    objective: float
    # multipliers of G x >= h, nonnegative
    duals: np.ndarray
    kkt_residual: float
    max_violation: float
    iterations: int
    polished: bool


def kkt_residual(
    Q: np.ndarray, q: np.ndarray, G: ConstraintOperator, h: np.ndarray, x: np.ndarray, lam: np.ndarray
) -> float:
    """
    Largest violation of the KKT conditions at (x, lam): stationarity
    (scaled by 1 + |q|), primal feasibility, dual sign and complementarity.
    """
    stationarity = np.abs(Q @ x + q - G.apply_t(lam)).max(initial=0.0) / (1.0 + np.abs(q).max(initial=0.0))
    slack = G.apply(x) - h
    return float(
        max(
            stationarity,
            max(0.0, -float(slack.min(initial=0.0))),
            max(0.0, -float(lam.min(initial=0.0))),
            float(np.abs(lam * slack).max(initial=0.0)),
        )
    )


def _objective(Q: np.ndarray, q: np.ndarray, x: np.ndarray) -> float:
    return float(0.5 * x @ Q @ x + q @ x)


def _polish(
    Q: np.ndarray, q: np.ndarray, G: ConstraintOperator, h: np.ndarray, x: np.ndarray, lam: np.ndarray
) -> tuple[np.ndarray, np.ndarray] | None:
    """
    Solve the equality-constrained problem on the constraints the interior
    point iterate treats as tight (multiplier larger than slack). Returns
    the polished (x, lam) if it is feasible, dual feasible and no worse.
    """
    slack = G.apply(x) - h
    active = np.flatnonzero(lam > slack)
    n = x.shape[0]
    G_a = G.rows(active)
    k = active.shape[0]
    K = np.block([[Q, -G_a.T], [G_a, np.zeros((k, k))]])
    rhs = np.concatenate([-q, h[active]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x_new, lam_a = sol[:n], sol[n:]
    tol = settings.tol_feas
    if (G.apply(x_new) - h).min(initial=0.0) < -tol or lam_a.min(initial=0.0) < -tol:
        return None
    lam_new = np.zeros_like(lam)
    lam_new[active] = np.maximum(lam_a, 0.0)
    if _objective(Q, q, x_new) > _objective(Q, q, x) + tol * (1.0 + abs(_objective(Q, q, x))):
        return None
    return x_new, lam_new


def solve_qp(
    Q: np.ndarray,
    q: np.ndarray,
    G: ConstraintOperator,
    h: np.ndarray,
    x0: np.ndarray | None = None,
    *,
    polish: bool = True,
) -> QPResult:
    """
    Mehrotra predictor-corrector for a convex QP with inequality constraints.

    `x0` need not be feasible; slacks start at max(G x0 - h, 1) and
    multipliers at 1. Iterates until the primal and dual residuals and the
    complementarity measure are all below tolerance, then polishes.

    When the iteration cap is hit (degenerate problems, typically repeated
    constraint rows), or the polish cannot confirm the active set, the
    iterate is handed to `solve_qp_active_set`, which finishes in a finite
    number of steps.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    h = np.asarray(h, dtype=float)
    n_con, n = G.shape
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    start = x.copy()
    s = np.maximum(G.apply(x) - h, 1.0)
    lam = np.ones(n_con)
    tol = min(settings.tol_kkt, settings.tol_feas)
    q_scale = 1.0 + np.abs(q).max(initial=0.0)
    h_scale = 1.0 + np.abs(h).max(initial=0.0)
    ridge = NEWTON_RIDGE * np.eye(n)

    for iteration in range(1, settings.ipm_max_iter + 1):
        r_d = Q @ x + q - G.apply_t(lam)
        r_p = G.apply(x) - s - h
        mu = float(s @ lam) / n_con if n_con else 0.0
        if (
            np.abs(r_d).max(initial=0.0) <= tol * q_scale
            and np.abs(r_p).max(initial=0.0) <= tol * h_scale
            and mu <= tol
        ):
            break

        D = lam / s
        K = Q + G.weighted_gram(D) + ridge

        def direction(r_c: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            dx = _solve_newton(K, -r_d - G.apply_t(r_c / s + D * r_p))
            ds = G.apply(dx) + r_p
            dlam = -r_c / s - D * ds
            return dx, ds, dlam

        # predictor
        dx, ds, dlam = direction(s * lam)
        alpha_aff = min(_step_to_boundary(s, ds), _step_to_boundary(lam, dlam))
        mu_aff = float((s + alpha_aff * ds) @ (lam + alpha_aff * dlam)) / n_con if n_con else 0.0
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # corrector
        dx, ds, dlam = direction(s * lam + ds * dlam - sigma * mu)
        alpha = STEP_FRACTION * min(_step_to_boundary(s, ds), _step_to_boundary(lam, dlam))
        alpha = min(alpha, 1.0)
        x = x + alpha * dx
        s = np.maximum(s + alpha * ds, 1e-300)
        lam = np.maximum(lam + alpha * dlam, 1e-300)
    else:
        logger.warning(
            "interior point method hit its iteration cap (%d), finishing by active set", settings.ipm_max_iter
        )
        return solve_qp_active_set(Q, q, G, h, x, anchor=start)

    polished = False
    if polish and n_con:
        result = _polish(Q, q, G, h, x, lam)
        if result is not None:
            x_p, lam_p = result
            if kkt_residual(Q, q, G, h, x_p, lam_p) <= kkt_residual(Q, q, G, h, x, lam):
                x, lam, polished = x_p, lam_p, True

    violation = max(0.0, -float((G.apply(x) - h).min(initial=0.0)))
    if polish and n_con and (not polished or violation > settings.tol_feas):
        try:
            return solve_qp_active_set(Q, q, G, h, x, anchor=start)
        except SolverStall:
            logger.warning("active set refinement stalled, keeping the interior point iterate")
    res = kkt_residual(Q, q, G, h, x, lam)
    logger.debug("ipm: %d iterations, kkt %.2e, polished=%s", iteration, res, polished)
    return QPResult(x, _objective(Q, q, x), lam, res, violation, iteration, polished)


# active set ########################


def _null_space(A: np.ndarray, n: int) -> np.ndarray:
    if A.shape[0] == 0:
        return np.eye(n)
    _, sv, vt = np.linalg.svd(A)
    rank = int((sv > 1e-12 * max(1.0, sv.max(initial=0.0))).sum())
    return vt[rank:].T


def _independent(A: np.ndarray, candidates: np.ndarray) -> list[int]:
    # greedy: keep a row only if it is not in the span of the rows kept so far
    chosen: list[int] = []
    for i in candidates:
        if len(chosen) == A.shape[1]:
            break
        if np.linalg.matrix_rank(A[chosen + [int(i)]]) == len(chosen) + 1:
            chosen.append(int(i))
    return chosen


def _feasible_point(G: np.ndarray, h: np.ndarray, candidates: list[np.ndarray | None]) -> np.ndarray:
    tol = settings.tol_feas
    for x in candidates:
        if x is not None and (G @ x - h).min(initial=0.0) >= -tol:
            return x
    if h.max(initial=0.0) <= 0:
        return np.zeros(G.shape[1])
    # G x >= h  as  -G x <= -h; raises Infeasible when there is no such x
    return solve_lp(np.zeros(G.shape[1]), A_ub=-G, b_ub=-h).x


def solve_qp_active_set(
    Q: np.ndarray,
    q: np.ndarray,
    G: ConstraintOperator,
    h: np.ndarray,
    x0: np.ndarray | None = None,
    *,
    anchor: np.ndarray | None = None,
) -> QPResult:
    """
    Primal active-set method (null-space variant) for the same QP as
    `solve_qp`.

    Starts from a feasible point: `x0` pulled back towards the feasible
    `anchor` as far as needed, or a point found by the simplex engine.
    Each step minimizes over the null space of the working constraints;
    Q only needs to be positive semidefinite, and a direction of zero
    curvature along which the objective keeps falling is followed to the
    nearest constraint. Raises `SolverStall` if no constraint stops such a
    direction, or after `settings.active_set_max_iter` steps.
    """
    Q = np.asarray(Q, dtype=float)
    q = np.asarray(q, dtype=float)
    h = np.asarray(h, dtype=float)
    n_con, n = G.shape
    G_dense = G.rows(np.arange(n_con))
    tol = settings.tol_feas

    base = _feasible_point(G_dense, h, [anchor, None if x0 is None else np.asarray(x0, dtype=float)])
    x = base
    if x0 is not None:
        target = np.asarray(x0, dtype=float)
        d = G_dense @ (target - base)
        slack = G_dense @ base - h
        shrinking = d < 0
        beta = 1.0
        if shrinking.any():
            beta = float(min(1.0, np.min(np.maximum(slack[shrinking], 0.0) / -d[shrinking])))
        x = base + beta * (target - base)

    # linearly independent working rows keep the multipliers unique
    working = _independent(G_dense, np.flatnonzero(G_dense @ x - h <= tol))
    g_scale = 1.0 + np.abs(q).max(initial=0.0)
    lam = np.zeros(n_con)
    for iteration in range(1, settings.active_set_max_iter + 1):
        g = Q @ x + q
        Z = _null_space(G_dense[working], n)
        reduced = Z.T @ g
        H = Z.T @ Q @ Z
        u = np.linalg.lstsq(H, -reduced, rcond=None)[0] if Z.shape[1] else np.zeros(0)
        residual = H @ u + reduced
        # reduced gradient outside the range of H: the objective falls without
        # bound along p until a constraint stops it
        ray = bool(np.abs(residual).max(initial=0.0) > 1e-10 * g_scale)
        p = -Z @ residual if ray else Z @ u

        if np.abs(p).max(initial=0.0) <= 1e-12 * (1.0 + np.abs(x).max(initial=0.0)):
            lam_w = np.linalg.lstsq(G_dense[working].T, g, rcond=None)[0] if working else np.zeros(0)
            if not working or lam_w.min() >= -tol * g_scale:
                lam = np.zeros(n_con)
                lam[working] = np.maximum(lam_w, 0.0)
                break
            # drop the most negative multiplier (lowest index among ties)
            del working[int(np.argmin(lam_w))]
            continue

        Gp = G_dense @ p
        outside = np.ones(n_con, dtype=bool)
        outside[working] = False
        blocking = np.flatnonzero(outside & (Gp < -1e-14 * (1.0 + np.abs(p).max())))
        slack = np.maximum(G_dense @ x - h, 0.0)
        alpha, block = 1.0, -1
        if blocking.size:
            ratios = slack[blocking] / -Gp[blocking]
            k = int(np.argmin(ratios))
            if ray or ratios[k] < 1.0:
                alpha, block = float(ratios[k]), int(blocking[k])
        if ray and block < 0:
            raise SolverStall("quadratic program is unbounded below")
        x = x + alpha * p
        if block >= 0:
            working.append(block)
    else:
        raise SolverStall(f"active set method hit its iteration cap ({settings.active_set_max_iter})")

    violation = max(0.0, -float((G_dense @ x - h).min(initial=0.0)))
    res = kkt_residual(Q, q, G, h, x, lam)
    logger.debug("active set: %d steps, %d working constraints, kkt %.2e", iteration, len(working), res)
    return QPResult(x, _objective(Q, q, x), lam, res, violation, iteration, True)


# barrier method ####################


class SmoothObjective(Protocol):
    def value(self, x: np.ndarray) -> float: ...

    def gradient(self, x: np.ndarray) -> np.ndarray: ...

    def hessian(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class BarrierResult:
    x: np.ndarray
    objective: float
    # bound on the suboptimality: (number of barrier terms) / t
    gap: float
    max_violation: float
    iterations: int


def minimize_barrier(
    objective: SmoothObjective,
    x0: np.ndarray,
    G: ConstraintOperator | None = None,
    h: np.ndarray | None = None,
    bound: float | None = None,
) -> BarrierResult:
    """
    Minimize a smooth convex objective over {G x >= h, |x_k| <= bound}.

    `x0` must be strictly feasible. Each outer round minimizes
    t * f(x) - sum log(barrier terms) by damped Newton steps with a
    backtracking line search that keeps the iterate strictly inside, then
    multiplies t by 10. The duality gap of the central path point is the
    number of barrier terms divided by t, which is what `gap` reports.
    """
    x = np.array(x0, dtype=float)
    n = x.shape[0]
    if G is not None:
        h = np.zeros(G.shape[0]) if h is None else np.asarray(h, dtype=float)
        if (G.apply(x) - h).min(initial=1.0) <= 0:
            raise ValueError("barrier start point must be strictly feasible")
    if bound is not None and np.abs(x).max(initial=0.0) >= bound:
        raise ValueError("barrier start point must lie strictly inside the box")

    n_terms = (G.shape[0] if G is not None else 0) + (2 * n if bound is not None else 0)
    if n_terms == 0:
        raise ValueError("minimize_barrier needs constraints or a bound")

    def barrier(z: np.ndarray) -> float:
        total = 0.0
        if G is not None:
            slack = G.apply(z) - h
            if slack.min(initial=1.0) <= 0:
                return np.inf
            total -= float(np.log(slack).sum())
        if bound is not None:
            upper, lower = bound - z, bound + z
            if min(upper.min(), lower.min()) <= 0:
                return np.inf
            total -= float(np.log(upper).sum() + np.log(lower).sum())
        return total

    t = 1.0
    iterations = 0
    for _ in range(settings.barrier_max_outer):
        for _ in range(settings.newton_max_iter):
            grad = t * objective.gradient(x)
            hess = t * objective.hessian(x) + NEWTON_RIDGE * np.eye(n)
            if G is not None:
                slack = G.apply(x) - h
                grad -= G.apply_t(1.0 / slack)
                hess += G.weighted_gram(1.0 / slack**2)
            if bound is not None:
                upper, lower = bound - x, bound + x
                grad += 1.0 / upper - 1.0 / lower
                hess += np.diag(1.0 / upper**2 + 1.0 / lower**2)
            dx = -_solve_newton(hess, grad)
            decrement = float(-grad @ dx)
            iterations += 1
            if decrement / 2 <= 1e-10:
                break
            current = t * objective.value(x) + barrier(x)
            step = 1.0
            while step > 1e-12:
                candidate = x + step * dx
                value = t * objective.value(candidate) + barrier(candidate)
                if value <= current - 0.25 * step * decrement:
                    break
                step *= 0.5
            else:
                break
            x = candidate
        if n_terms / t <= settings.tol_kkt:
            break
        t *= 10.0
    else:
        raise SolverStall(f"barrier method did not reach gap {settings.tol_kkt} in {settings.barrier_max_outer} rounds")

    violation = 0.0
    if G is not None:
        violation = max(0.0, -float((G.apply(x) - h).min(initial=0.0)))
    logger.debug("barrier: %d newton steps, final t %.1e", iterations, t)
    return BarrierResult(x, objective.value(x), n_terms / t, violation, iterations)
