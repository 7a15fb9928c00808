"""
A dense two-phase revised simplex method.

    minimize  c.x   subject to  A x = b,  x >= 0

`solve_standard_lp` is the engine. `solve_lp` wraps it for the shapes the
rest of the library actually writes down: free variables, `<=` rows and
`=` rows.

The basis matrix is refactored from scratch every iteration with
`np.linalg.solve`. That is wasteful next to a real LU update, but the
programs here have at most a few thousand columns and it keeps the code
short enough to trust.

Pivoting uses Dantzig's rule (most negative reduced cost) and switches to
Bland's rule after a run of degenerate pivots, which rules out cycling.
"""
import logging
from dataclasses import dataclass

import numpy as np

from .config import settings
from .errors import Infeasible, InvalidParameter, SolverStall, Unbounded

logger = logging.getLogger(__name__)

# entries of B^-1 A_j below this are treated as zero in the ratio test
PIVOT_TOL = 1e-9
# consecutive degenerate pivots before falling back to Bland's rule
BLAND_AFTER = 50


class RevisedSimplex:
    """
    Working state for one simplex run: the constraint matrix, the right hand
    side and the current basis (one column index per row).

    The basis passed in must be feasible, i.e. B^-1 b >= 0.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray, basis: np.ndarray, max_iter: int | None = None):
        self.A = A
        self.b = b
        self.basis = np.array(basis, dtype=int)
        self.max_iter = settings.simplex_max_iter if max_iter is None else max_iter
        self.iterations = 0

    def _basis_matrix(self) -> np.ndarray:
        return self.A[:, self.basis]

    def _solve(self, M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        try:
            return np.linalg.solve(M, rhs)
        except np.linalg.LinAlgError:
            raise SolverStall("simplex basis became singular") from None

    def primal(self) -> np.ndarray:
        x = np.zeros(self.A.shape[1])
        x[self.basis] = np.maximum(self._solve(self._basis_matrix(), self.b), 0.0)
        return x

    def duals(self, c: np.ndarray) -> np.ndarray:
        return self._solve(self._basis_matrix().T, c[self.basis])

    def reduced_costs(self, c: np.ndarray) -> np.ndarray:
        d = c - self.A.T @ self.duals(c)
        d[self.basis] = 0.0
        return d

    def run(self, c: np.ndarray) -> None:
        """Pivot until no column has a negative reduced cost."""
        tol = settings.tol_reduced_cost
        degenerate = 0
        while True:
            B = self._basis_matrix()
            x_B = self._solve(B, self.b)
            d = c - self.A.T @ self._solve(B.T, c[self.basis])
            d[self.basis] = 0.0
            candidates = np.flatnonzero(d < -tol)
            if candidates.size == 0:
                return
            if self.iterations >= self.max_iter:
                raise SolverStall(f"simplex hit its iteration cap ({self.max_iter})")

            if degenerate < BLAND_AFTER:
                j = int(candidates[np.argmin(d[candidates])])
            else:
                j = int(candidates[0])

            u = self._solve(B, self.A[:, j])
            positive = u > PIVOT_TOL
            if not positive.any():
                raise Unbounded("objective decreases without bound along an extreme ray")
            ratios = np.full(u.shape[0], np.inf)
            ratios[positive] = np.maximum(x_B[positive], 0.0) / u[positive]
            theta = ratios.min()
            ties = np.flatnonzero(ratios <= theta + 1e-12 * max(1.0, theta))
            # Bland's leaving rule: smallest basic index among the tied rows
            r = int(ties[np.argmin(self.basis[ties])])

            degenerate = degenerate + 1 if theta <= 1e-12 else 0
            self.basis[r] = j
            self.iterations += 1


@dataclass(frozen=True)
class PhaseOneResult:
    """
    Outcome of minimizing the total artificial infeasibility.

    `value` is zero (to tolerance) exactly when the system is feasible;
    `duals` always certify the value, so a positive value comes with a
    Farkas-style certificate of infeasibility.
    """

    value: float
    x: np.ndarray
    duals: np.ndarray
    iterations: int


def _phase_one(A: np.ndarray, b: np.ndarray) -> tuple[RevisedSimplex, np.ndarray, np.ndarray]:
    rows, cols = A.shape
    flip = b < 0
    A = np.where(flip[:, None], -A, A)
    b = np.where(flip, -b, b)
    A1 = np.hstack([A, np.eye(rows)])
    c1 = np.concatenate([np.zeros(cols), np.ones(rows)])
    solver = RevisedSimplex(A1, b, np.arange(cols, cols + rows))
    solver.run(c1)
    return solver, c1, flip


def phase_one(A: np.ndarray, b: np.ndarray) -> PhaseOneResult:
    """Decide whether {x >= 0 : A x = b} is empty, without raising when it is."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    solver, c1, flip = _phase_one(A, b)
    x = solver.primal()
    duals = solver.duals(c1)
    duals[flip] *= -1
    return PhaseOneResult(float(c1 @ x), x[: A.shape[1]], duals, solver.iterations)


@dataclass(frozen=True)
class LPResult:
    x: np.ndarray
    objective: float
    # one multiplier per row of A; rows dropped as redundant get 0
    duals: np.ndarray
    # smallest reduced cost over all columns; >= -tol_reduced_cost at optimality
    min_reduced_cost: float
    iterations: int


def solve_standard_lp(c: np.ndarray, A: np.ndarray, b: np.ndarray) -> LPResult:
    """
    Two-phase revised simplex for `min c.x, A x = b, x >= 0`.

    Raises `Infeasible` when phase one ends with positive artificial mass and
    `Unbounded` when phase two finds an improving ray. Redundant equality
    rows are detected when an artificial variable cannot be pivoted out of
    the basis, and dropped.
    """
    c = np.asarray(c, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    rows, cols = A.shape
    if c.shape[0] != cols or b.shape[0] != rows:
        raise InvalidParameter(f"inconsistent LP shapes: c {c.shape}, A {A.shape}, b {b.shape}")

    solver, c1, flip = _phase_one(A, b)
    infeasibility = float(c1 @ solver.primal())
    if infeasibility > settings.tol_feas * max(1.0, float(np.abs(b).max(initial=0.0))):
        raise Infeasible(f"phase one ended with infeasibility {infeasibility:.3g}")

    # drive remaining artificials out of the basis
    keep = np.ones(rows, dtype=bool)
    for r in range(rows):
        if solver.basis[r] < cols:
            continue
        e_r = np.zeros(rows)
        e_r[r] = 1.0
        rho = solver._solve(solver._basis_matrix().T, e_r)
        alpha = rho @ solver.A[:, :cols]
        alpha[solver.basis[solver.basis < cols]] = 0.0
        entering = np.flatnonzero(np.abs(alpha) > PIVOT_TOL)
        if entering.size:
            solver.basis[r] = int(entering[np.argmax(np.abs(alpha[entering]))])
        else:
            keep[r] = False
    if not keep.all():
        logger.debug("dropping %d redundant rows", int((~keep).sum()))

    phase2 = RevisedSimplex(solver.A[keep][:, :cols], solver.b[keep], solver.basis[keep])
    phase2.iterations = solver.iterations
    phase2.run(c)

    x = phase2.primal()
    duals = np.zeros(rows)
    duals[keep] = phase2.duals(c)
    duals[flip] *= -1
    d = phase2.reduced_costs(c)
    logger.debug("simplex finished after %d pivots", phase2.iterations)
    return LPResult(x, float(c @ x), duals, float(d.min(initial=0.0)), phase2.iterations)


@dataclass(frozen=True)
class LPSolution:
    """Solution of `solve_lp` in the caller's variables."""

    x: np.ndarray
    objective: float
    ub_duals: np.ndarray
    eq_duals: np.ndarray
    min_reduced_cost: float
    iterations: int


def solve_lp(
    c: np.ndarray,
    A_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    A_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    nonneg: np.ndarray | None = None,
) -> LPSolution:
    """
    minimize c.x  subject to  A_ub x <= b_ub,  A_eq x = b_eq.

    Variables are free unless flagged in the boolean mask `nonneg`. Free
    variables are split into positive and negative parts; `<=` rows get a
    slack.

    Duals are the sensitivities of the optimum to the right hand sides:
    `ub_duals` are <= 0 and `eq_duals` are free, the same convention as
    scipy's `marginals`.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).reshape(-1)
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    nonneg = np.zeros(n, dtype=bool) if nonneg is None else np.asarray(nonneg, dtype=bool)
    free = np.flatnonzero(~nonneg)
    n_ub = A_ub.shape[0]

    # columns: x (as given), -x_free, slacks
    A = np.block(
        [
            [A_ub, -A_ub[:, free], np.eye(n_ub)],
            [A_eq, -A_eq[:, free], np.zeros((A_eq.shape[0], n_ub))],
        ]
    )
    b = np.concatenate([b_ub, b_eq])
    cost = np.concatenate([c, -c[free], np.zeros(n_ub)])

    res = solve_standard_lp(cost, A, b)
    x = res.x[:n].copy()
    x[free] -= res.x[n : n + free.shape[0]]
    return LPSolution(
        x=x,
        objective=float(c @ x),
        ub_duals=res.duals[:n_ub],
        eq_duals=res.duals[n_ub:],
        min_reduced_cost=res.min_reduced_cost,
        iterations=res.iterations,
    )
