"""
The convex problem behind every activation pattern.

Fix an activation pattern A (m x N) and the output weights v. On the set of
first-layer weights that realize A, every prediction is linear in W:

    yhat_i = sum_j v_j A_ji (w_j . x̄_i) + c

and that set is cut out by the linear inequalities (2 A_ji - 1) w_j . x̄_i >= 0.
So minimizing the loss over one region is a convex program:

* MSE       - a quadratic program, solved by `qp.solve_qp`.
* L1        - a linear program with split residuals, solved by `lp.solve_lp`.
* logistic  - a smooth convex program, solved by `qp.minimize_barrier`.

`RegionLayout` turns a `RegionProblem` into the flat parameter vector
theta = (w_1, ..., w_m[, c]) those engines work with, and one
`RegionEngine` per loss knows how to set up and read back its engine.

Constraints are scaled by 1/|x̄_i| before any tolerance is applied, so the
feasibility test does not depend on the scale of the data.
"""
import abc
import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .arrangement import ActivationPattern, FeasibilityOracle, unit_examples
from .config import settings
from .data import Dataset, homogenize
from .errors import Infeasible, InvalidParameter, SolverStall
from .losses import LossKind, get_loss
from .lp import solve_lp
from .network import ShallowReluNet, empirical_loss
from .qp import ConstraintOperator, minimize_barrier, solve_qp

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RegionProblem:
    """
    One activation region: minimize the loss over first-layer weights (and
    the output bias when `fit_output_bias`) with the pattern and `v` fixed.

    `witnesses` optionally gives a strictly feasible W (one witness row per
    unit) to start the interior point engines from.
    """

    pattern: ActivationPattern
    dataset: Dataset
    v: np.ndarray
    loss_kind: LossKind = LossKind.MSE
    fit_output_bias: bool = False
    witnesses: np.ndarray | None = None

    def __post_init__(self) -> None:
        v = np.array(self.v, dtype=float).reshape(-1)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        if self.pattern.m != v.shape[0] or self.pattern.n != self.dataset.n:
            raise InvalidParameter(
                f"pattern is {self.pattern.m} x {self.pattern.n}, "
                f"expected {v.shape[0]} units x {self.dataset.n} examples"
            )
        if self.witnesses is not None and np.shape(self.witnesses) != (v.shape[0], self.dataset.p):
            raise InvalidParameter("witnesses must be m x p")


@dataclass(frozen=True, eq=False)
class RegionSolution:
    W: np.ndarray
    c: float
    loss: float
    max_constraint_violation: float
    kkt_residual: float
    iterations: int

    def to_json(self) -> dict[str, Any]:
        return {
            "W": self.W.tolist(),
            "c": self.c,
            "loss": self.loss,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
        }

    def network(self, v: np.ndarray, use_bias: bool) -> ShallowReluNet:
        return ShallowReluNet(self.W, v, self.c, use_bias)


class RegionConstraints(ConstraintOperator):
    """
    The sign constraints of a region, (2 A_ji - 1) w_j . u_i >= 0 with u_i
    the unit-length examples. Row (j, i) only touches block j of theta, so
    G^T D G is block diagonal and is assembled block by block.
    """

    def __init__(self, signs: np.ndarray, unit_rows: np.ndarray, n_params: int):
        self.signs = signs  # m x N, +-1
        self.unit_rows = unit_rows  # N x p
        self.m, self.n = signs.shape
        self.p = unit_rows.shape[1]
        self.n_params = n_params

    @property
    def shape(self) -> tuple[int, int]:
        return self.m * self.n, self.n_params

    def _blocks(self, theta: np.ndarray) -> np.ndarray:
        return theta[: self.m * self.p].reshape(self.m, self.p)

    def apply(self, theta: np.ndarray) -> np.ndarray:
        return (self.signs * (self._blocks(theta) @ self.unit_rows.T)).reshape(-1)

    def apply_t(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_params)
        out[: self.m * self.p] = ((y.reshape(self.m, self.n) * self.signs) @ self.unit_rows).reshape(-1)
        return out

    def weighted_gram(self, weights: np.ndarray) -> np.ndarray:
        # signs square to one, so only the weights matter per block
        wts = weights.reshape(self.m, self.n)
        blocks = np.einsum("ji,ik,il->jkl", wts, self.unit_rows, self.unit_rows)
        out = np.zeros((self.n_params, self.n_params))
        for j in range(self.m):
            sl = slice(j * self.p, (j + 1) * self.p)
            out[sl, sl] = blocks[j]
        return out

    def rows(self, index: np.ndarray) -> np.ndarray:
        index = np.asarray(index, dtype=int)
        out = np.zeros((index.shape[0], self.n_params))
        units, examples = np.divmod(index, self.n)
        for r, (j, i) in enumerate(zip(units, examples)):
            out[r, j * self.p : (j + 1) * self.p] = self.signs[j, i] * self.unit_rows[i]
        return out


@dataclass(eq=False)
class RegionLayout:
    """
    Flat-parameter view of a region problem.

    `design` is the N x n matrix with prediction = design @ theta (the
    column of ones for the output bias included when it is fitted).
    """

    problem: RegionProblem
    xbar: np.ndarray = field(init=False)
    design: np.ndarray = field(init=False)
    constraints: RegionConstraints = field(init=False)

    def __post_init__(self) -> None:
        pb = self.problem
        self.xbar = homogenize(pb.dataset)
        unit_rows, _ = unit_examples(pb.dataset)
        bits = pb.pattern.bits.astype(float)
        m, n, p = pb.pattern.m, pb.dataset.n, pb.dataset.p
        # design[i, j*p:(j+1)*p] = v_j A_ji x̄_i
        blocks = (pb.v[:, None] * bits)[:, :, None] * self.xbar.T[None, :, :]
        design = blocks.transpose(1, 0, 2).reshape(n, m * p)
        if pb.fit_output_bias:
            design = np.hstack([design, np.ones((n, 1))])
        self.design = design
        self.constraints = RegionConstraints(2.0 * bits - 1.0, unit_rows, self.n_params)

    @property
    def n_params(self) -> int:
        pb = self.problem
        return pb.pattern.m * pb.dataset.p + (1 if pb.fit_output_bias else 0)

    def pack(self, W: np.ndarray, c: float = 0.0) -> np.ndarray:
        theta = np.asarray(W, dtype=float).reshape(-1)
        return np.append(theta, c) if self.problem.fit_output_bias else theta

    def unpack(self, theta: np.ndarray) -> tuple[np.ndarray, float]:
        m, p = self.problem.pattern.m, self.problem.dataset.p
        W = theta[: m * p].reshape(m, p).copy()
        c = float(theta[-1]) if self.problem.fit_output_bias else 0.0
        return W, c

    def objective(self, theta: np.ndarray) -> float:
        """The region objective: mean loss of the linear-in-theta predictions."""
        return get_loss(self.problem.loss_kind).mean(self.design @ theta, self.problem.dataset.y)

    def violation(self, theta: np.ndarray) -> float:
        return max(0.0, -float(self.constraints.apply(theta).min(initial=0.0)))

    def start_point(self, scale: float = 1.0) -> np.ndarray:
        """A strictly feasible theta built from the witnesses (margin `scale`)."""
        pb = self.problem
        witnesses = pb.witnesses
        if witnesses is None:
            witnesses = FeasibilityOracle(pb.dataset).witnesses(pb.pattern)
        unit_rows, _ = unit_examples(pb.dataset)
        margins = (2.0 * pb.pattern.bits - 1.0) * (witnesses @ unit_rows.T)
        if margins.min() <= 0:
            raise Infeasible("witnesses do not realize the pattern")
        W = witnesses * (scale / margins.min(axis=1))[:, None]
        return self.pack(W, 0.0)

    def solution(self, theta: np.ndarray, kkt: float, iterations: int) -> RegionSolution:
        W, c = self.unpack(theta)
        return RegionSolution(W, c, self.objective(theta), self.violation(theta), kkt, iterations)


class RegionEngine(abc.ABC):
    """
    Strategy for solving one loss kind's region problem.

    The QP, LP and barrier engines know nothing about networks; an engine
    translates a `RegionLayout` into their terms and back.
    """

    @abc.abstractmethod
    def solve(self, layout: RegionLayout) -> RegionSolution:
        """Solve the region problem described by `layout`."""


class QuadraticRegionEngine(RegionEngine):
    """MSE: (1/N) |design theta - y|^2 as 1/2 theta.Q theta + q.theta + const."""

    def solve(self, layout: RegionLayout) -> RegionSolution:
        y = layout.problem.dataset.y
        n = y.shape[0]
        Phi = layout.design
        Q = (2.0 / n) * Phi.T @ Phi
        q = -(2.0 / n) * Phi.T @ y
        try:
            x0 = layout.start_point(1e-3)
        except Infeasible:
            x0 = None
        result = solve_qp(Q, q, layout.constraints, np.zeros(layout.constraints.shape[0]), x0)
        return layout.solution(result.x, result.kkt_residual, result.iterations)


class LinearRegionEngine(RegionEngine):
    """
    L1: minimize (1/N) sum (r+ + r-) with design theta - r+ + r- = y and the
    sign constraints, theta free and r+, r- >= 0.
    """

    def solve(self, layout: RegionLayout) -> RegionSolution:
        y = layout.problem.dataset.y
        n = y.shape[0]
        k = layout.n_params
        G = layout.constraints.rows(np.arange(layout.constraints.shape[0]))
        c = np.concatenate([np.zeros(k), np.full(2 * n, 1.0 / n)])
        A_eq = np.hstack([layout.design, -np.eye(n), np.eye(n)])
        A_ub = np.hstack([-G, np.zeros((G.shape[0], 2 * n))])
        nonneg = np.concatenate([np.zeros(k, dtype=bool), np.ones(2 * n, dtype=bool)])
        sol = solve_lp(c, A_ub=A_ub, b_ub=np.zeros(G.shape[0]), A_eq=A_eq, b_eq=y, nonneg=nonneg)
        return layout.solution(sol.x[:k], max(0.0, -sol.min_reduced_cost), sol.iterations)


class _LogisticObjective:
    def __init__(self, design: np.ndarray, y: np.ndarray):
        self.design = design
        self.y = y
        self.loss = get_loss(LossKind.LOGISTIC)

    def value(self, theta: np.ndarray) -> float:
        return self.loss.mean(self.design @ theta, self.y)

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.design.T @ self.loss.derivative(self.design @ theta, self.y) / self.y.shape[0]

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        curv = self.loss.second_derivative(self.design @ theta, self.y)
        return self.design.T @ (curv[:, None] * self.design) / self.y.shape[0]


class LogisticRegionEngine(RegionEngine):
    """
    Logistic: barrier method over the sign constraints. A region whose
    linear predictions separate the labels has no minimizer, so every
    parameter is also boxed to |theta_k| <= settings.logistic_weight_bound.
    """

    def solve(self, layout: RegionLayout) -> RegionSolution:
        bound = settings.logistic_weight_bound
        x0 = layout.start_point(1.0)
        top = np.abs(x0).max(initial=0.0)
        if top >= 0.5 * bound:
            x0 = x0 * (0.5 * bound / top)
        objective = _LogisticObjective(layout.design, layout.problem.dataset.y)
        result = minimize_barrier(
            objective, x0, layout.constraints, np.zeros(layout.constraints.shape[0]), bound
        )
        return layout.solution(result.x, result.gap, result.iterations)


_ENGINES: dict[LossKind, RegionEngine] = {
    LossKind.MSE: QuadraticRegionEngine(),
    LossKind.L1: LinearRegionEngine(),
    LossKind.LOGISTIC: LogisticRegionEngine(),
}


def solve_region(problem: RegionProblem) -> RegionSolution:
    """
    Minimize the loss over one activation region.

    The returned weights satisfy every sign constraint to within
    `settings.tol_feas` (after scaling each constraint by 1/|x̄_i|), and
    `loss` is the region objective evaluated at them; an engine that cannot
    manage that raises `SolverStall`.
    """
    layout = RegionLayout(problem)
    solution = _ENGINES[problem.loss_kind].solve(layout)
    if solution.max_constraint_violation > settings.tol_feas:
        raise SolverStall(
            f"{problem.loss_kind.value} region solution violates its constraints by "
            f"{solution.max_constraint_violation:.2e} (kkt {solution.kkt_residual:.2e})"
        )
    return solution


# alternating optimization ##########


def fit_output_layer(
    features: np.ndarray, y: np.ndarray, loss_kind: LossKind | str, fit_bias: bool = True
) -> tuple[np.ndarray, float]:
    """
    Best (v, c) for fixed hidden features (N x m): least squares for MSE,
    an LP for L1, and a boxed Newton barrier for logistic.
    """
    kind = LossKind(loss_kind)
    n, m = features.shape
    design = np.hstack([features, np.ones((n, 1))]) if fit_bias else features

    def split(theta: np.ndarray) -> tuple[np.ndarray, float]:
        return theta[:m], float(theta[m]) if fit_bias else 0.0

    if kind is LossKind.MSE:
        return split(np.linalg.lstsq(design, y, rcond=None)[0])
    if kind is LossKind.L1:
        k = design.shape[1]
        c = np.concatenate([np.zeros(k), np.full(2 * n, 1.0 / n)])
        A_eq = np.hstack([design, -np.eye(n), np.eye(n)])
        nonneg = np.concatenate([np.zeros(k, dtype=bool), np.ones(2 * n, dtype=bool)])
        return split(solve_lp(c, A_eq=A_eq, b_eq=y, nonneg=nonneg).x[:k])
    result = minimize_barrier(
        _LogisticObjective(design, y), np.zeros(design.shape[1]), bound=settings.logistic_weight_bound
    )
    return split(result.x)


@dataclass(frozen=True, eq=False)
class AlternatingResult:
    W: np.ndarray
    v: np.ndarray
    c: float
    loss: float
    # loss after each full round
    history: list[float]

    @property
    def rounds(self) -> int:
        return len(self.history)


def alternate_optimize(
    pattern: ActivationPattern,
    dataset: Dataset,
    v0: np.ndarray,
    loss_kind: LossKind | str,
    max_rounds: int = 50,
    tol: float = 1e-10,
    witnesses: np.ndarray | None = None,
) -> AlternatingResult:
    """
    Block coordinate descent inside one activation region: solve the region
    problem for (W, c) with v fixed, then refit (v, c) with the hidden
    features fixed, until a round improves the loss by less than `tol`.

    Each half step minimizes over its block starting from the current
    point, so the loss never goes up. `W` stays in the region throughout.
    """
    kind = LossKind(loss_kind)
    loss_fn = get_loss(kind)
    xbar = homogenize(dataset)
    v = np.array(v0, dtype=float)
    W = np.zeros((pattern.m, dataset.p))
    c = 0.0
    history: list[float] = []
    for round_ in range(max_rounds):
        region = solve_region(RegionProblem(pattern, dataset, v, kind, True, witnesses))
        features = np.maximum(region.W @ xbar, 0.0).T
        v_fit, c_fit = fit_output_layer(features, dataset.y, kind)
        loss_fit = loss_fn.mean(features @ v_fit + c_fit, dataset.y)
        if loss_fit <= region.loss:
            step = (region.W, v_fit, c_fit, loss_fit)
        else:
            step = (region.W, v, region.c, region.loss)
        if history and step[3] >= history[-1]:
            # no progress at all: keep the previous round
            break
        W, v, c, loss = step
        history.append(loss)
        logger.debug("alternating round %d: loss %.6g", round_ + 1, loss)
        if len(history) > 1 and history[-2] - loss < tol:
            break

    net = ShallowReluNet(W, v, c, dataset.use_bias)
    return AlternatingResult(W, v, c, empirical_loss(net, dataset, kind), history)
