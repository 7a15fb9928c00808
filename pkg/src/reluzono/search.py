"""
Training as a search over activation patterns.

Each optimizer walks over vertices of the m-fold zonotope power (full
activation patterns), solving the convex region problem at every vertex
it looks at:

* `exact_erm`      - every vertex, up to permutations of interchangeable units.
* `gls`            - best-improvement local search over one-bit neighbors.
* `mgls`           - first-improvement local search that tries the flips
                     suggested by tight constraints first.
* `random_vertex`  - the pattern of a random Gaussian weight matrix, the start
                     point of the searches and of `random_vertex_fit`.

All of them share a `RegionEvaluator`, which caches region solutions by
canonical key so a vertex reached twice (or reached as a permutation of
one already solved) costs nothing the second time.
"""
import itertools
import json
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

import numpy as np

from . import rng
from .arrangement import (
    ActivationPattern,
    FeasibilityOracle,
    canonical_key,
    canonical_order,
    enumerate_chambers,
    neighbor_moves,
    pattern_of_weights,
    unit_examples,
    unit_groups,
)
from .config import settings
from .convex import RegionProblem, RegionSolution, alternate_optimize, solve_region
from .data import Dataset
from .errors import ComplexityRefused, InvalidParameter
from .losses import LossKind
from .network import ShallowReluNet, empirical_loss

logger = logging.getLogger(__name__)


class TerminalReason(str, Enum):
    LOCAL_MIN = "local_min"
    MAX_STEPS = "max_steps"
    EXACT_COMPLETE = "exact_complete"


@dataclass(frozen=True)
class TraceStep:
    key: str
    loss: float
    qp_solves: int

    def to_json(self) -> dict[str, Any]:
        return {"key": self.key, "loss": self.loss, "qp_solves": self.qp_solves}


@dataclass
class SearchTrace:
    """
    What a search did: one step per accepted move (per region for
    `exact_erm`), the number of region solves it took, and why it stopped.
    """

    steps: list[TraceStep] = field(default_factory=list)
    terminal_reason: TerminalReason = TerminalReason.MAX_STEPS

    @property
    def qp_solves(self) -> int:
        return sum(step.qp_solves for step in self.steps)

    def record(self, key: str, loss: float, qp_solves: int) -> None:
        self.steps.append(TraceStep(key, loss, qp_solves))

    def to_json(self) -> dict[str, Any]:
        return {
            "steps": [step.to_json() for step in self.steps],
            "terminal_reason": self.terminal_reason.value,
            "qp_solves": self.qp_solves,
        }

    def to_jsonl(self) -> str:
        return "".join(json.dumps(step.to_json()) + "\n" for step in self.steps)


@dataclass(frozen=True, eq=False)
class SearchResult:
    net: ShallowReluNet
    loss: float
    trace: SearchTrace
    pattern: ActivationPattern

    def __iter__(self) -> Any:
        # unpacks as (net, loss, trace)
        return iter((self.net, self.loss, self.trace))

    def to_json(self) -> dict[str, Any]:
        return {
            "best_loss": self.loss,
            "best_pattern": self.pattern.to_json(),
            "net_checkpoint": self.net.to_json(),
            "trace": self.trace.to_json(),
        }


def _check_v(v: np.ndarray | Sequence[float], m: int) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if m < 1 or v.shape[0] != m:
        raise InvalidParameter(f"v has {v.shape[0]} entries for m={m}")
    return v


class RegionEvaluator:
    """
    Solves region problems for one (dataset, v, loss) and remembers the
    answers by canonical key.

    A cached solution is stored for the canonical unit order and permuted
    back for the pattern that asked, so its W always lines up with the
    pattern's rows. `qp_solves` counts real solves only.
    """

    def __init__(
        self,
        dataset: Dataset,
        v: np.ndarray,
        loss_kind: LossKind | str,
        fit_output_bias: bool,
        oracle: FeasibilityOracle | None = None,
    ):
        self.dataset = dataset
        self.v = v
        self.loss_kind = LossKind(loss_kind)
        self.fit_output_bias = fit_output_bias
        self.oracle = oracle or FeasibilityOracle(dataset)
        self.groups = unit_groups(v)
        self._cache: dict[str, RegionSolution] = {}
        self._lock = threading.Lock()
        self.qp_solves = 0

    def key(self, pattern: ActivationPattern) -> str:
        return canonical_key(pattern, self.groups)

    def evaluate(self, pattern: ActivationPattern, witnesses: np.ndarray | None = None) -> RegionSolution:
        perm = canonical_order(pattern, self.groups)
        canonical = ActivationPattern(pattern.bits[perm])
        key = canonical.hex()
        with self._lock:
            cached = self._cache.get(key)
        if cached is None:
            if witnesses is None:
                witnesses = self.oracle.witnesses(canonical)
            else:
                witnesses = np.asarray(witnesses)[perm]
            problem = RegionProblem(canonical, self.dataset, self.v, self.loss_kind, self.fit_output_bias, witnesses)
            cached = solve_region(problem)
            with self._lock:
                self._cache.setdefault(key, cached)
                self.qp_solves += 1
        W = np.empty_like(cached.W)
        W[perm] = cached.W
        return RegionSolution(W, cached.c, cached.loss, cached.max_constraint_violation, cached.kkt_residual, cached.iterations)

    def evaluate_many(self, patterns: Sequence[ActivationPattern]) -> list[RegionSolution]:
        """Evaluate in order; uses a thread pool when `settings.workers > 1`."""
        if settings.workers > 1 and len(patterns) > 1:
            with ThreadPoolExecutor(max_workers=settings.workers) as pool:
                return list(pool.map(self.evaluate, patterns))
        return [self.evaluate(p) for p in patterns]

    def network(self, solution: RegionSolution) -> ShallowReluNet:
        return solution.network(self.v, self.dataset.use_bias)


def _improves(new: float, old: float) -> bool:
    # strict decrease, ignoring differences at the level of rounding error
    return new < old - 1e-12 * max(1.0, abs(old))


def _finish(
    evaluator: RegionEvaluator, pattern: ActivationPattern, solution: RegionSolution, trace: SearchTrace
) -> SearchResult:
    net = evaluator.network(solution)
    return SearchResult(net, empirical_loss(net, evaluator.dataset, evaluator.loss_kind), trace, pattern)


# exact #############################


def region_count(n_chambers: int, groups: Iterable[Sequence[int]]) -> int:
    """Number of vertices `exact_erm` visits: multisets of chambers per group."""
    return math.prod(math.comb(n_chambers + len(g) - 1, len(g)) for g in groups)


def exact_erm(
    dataset: Dataset,
    m: int,
    v: np.ndarray | Sequence[float],
    loss_kind: LossKind | str,
    fit_output_bias: bool = False,
) -> SearchResult:
    """
    Global empirical risk minimization by brute force over vertices.

    Every unit gets one chamber of the single-unit arrangement; units with
    the same output weight are interchangeable, so each group takes a
    multiset of chambers rather than a sequence. Ties between regions go to
    the one enumerated first.

    Raises `ComplexityRefused` when the number of regions exceeds
    `settings.region_solve_cap`.
    """
    v = _check_v(v, m)
    chambers = enumerate_chambers(dataset)
    groups = unit_groups(v)
    total = region_count(len(chambers), groups)
    if total > settings.region_solve_cap:
        raise ComplexityRefused(f"{total} regions to solve exceeds the cap of {settings.region_solve_cap}")
    logger.info("exact search: %d chambers, %d regions", len(chambers), total)

    evaluator = RegionEvaluator(dataset, v, loss_kind, fit_output_bias)
    trace = SearchTrace()
    best: tuple[ActivationPattern, RegionSolution] | None = None

    def patterns() -> Iterable[tuple[ActivationPattern, np.ndarray]]:
        per_group = [itertools.combinations_with_replacement(range(len(chambers)), len(g)) for g in groups]
        for choice in itertools.product(*per_group):
            bits = np.empty((m, dataset.n), dtype=np.uint8)
            witnesses = np.empty((m, dataset.p))
            for group, picks in zip(groups, choice):
                for unit, k in zip(group, picks):
                    bits[unit] = chambers.patterns[k]
                    witnesses[unit] = chambers.witnesses[k]
            yield ActivationPattern(bits), witnesses

    batch = max(1, settings.workers) * 16
    todo = patterns()
    while chunk := list(itertools.islice(todo, batch)):
        if settings.workers > 1:
            with ThreadPoolExecutor(max_workers=settings.workers) as pool:
                solutions = list(pool.map(lambda pw: evaluator.evaluate(*pw), chunk))
        else:
            solutions = [evaluator.evaluate(p, w) for p, w in chunk]
        for (pattern, _), solution in zip(chunk, solutions):
            trace.record(evaluator.key(pattern), solution.loss, 1)
            if best is None or solution.loss < best[1].loss:
                best = (pattern, solution)

    trace.terminal_reason = TerminalReason.EXACT_COMPLETE
    if best is None:
        raise ComplexityRefused("the dataset has no chambers (an example is zero)")
    return _finish(evaluator, best[0], best[1], trace)


# local search ######################


def random_vertex(dataset: Dataset, m: int, seed: int) -> ActivationPattern:
    """The activation pattern of an m x p standard normal weight matrix."""
    if m < 1:
        raise InvalidParameter("m must be positive")
    W = rng.stream(seed, "init").standard_normal((m, dataset.p))
    return pattern_of_weights(W, dataset)


def gls(
    dataset: Dataset,
    m: int,
    v: np.ndarray | Sequence[float],
    loss_kind: LossKind | str,
    max_steps: int,
    seed: int,
    fit_output_bias: bool = False,
) -> SearchResult:
    """
    Greedy local search: from a random vertex, repeatedly solve every
    feasible one-bit neighbor and move to the best one if it is strictly
    better. Ties among equally good neighbors go to the smaller key.
    """
    v = _check_v(v, m)
    evaluator = RegionEvaluator(dataset, v, loss_kind, fit_output_bias)
    pattern = random_vertex(dataset, m, seed)
    current = evaluator.evaluate(pattern)
    trace = SearchTrace()
    trace.record(evaluator.key(pattern), current.loss, evaluator.qp_solves)

    for step in range(max_steps):
        before = evaluator.qp_solves
        candidates = [nbr for _, _, nbr in neighbor_moves(pattern, dataset, evaluator.oracle)]
        solutions = evaluator.evaluate_many(candidates)
        scored = sorted(
            ((sol.loss, evaluator.key(nbr), nbr, sol) for nbr, sol in zip(candidates, solutions)),
            key=lambda entry: (entry[0], entry[1]),
        )
        if not scored or not _improves(scored[0][0], current.loss):
            trace.terminal_reason = TerminalReason.LOCAL_MIN
            break
        loss, key, pattern, current = scored[0]
        trace.record(key, loss, evaluator.qp_solves - before)
        logger.info("gls step %d: loss %.6g (%d neighbors)", step + 1, loss, len(candidates))
    else:
        trace.terminal_reason = TerminalReason.MAX_STEPS

    return _finish(evaluator, pattern, current, trace)


def tight_bits(solution: RegionSolution, dataset: Dataset, active_tol: float) -> np.ndarray:
    """Bits whose sign constraint holds with equality (within tolerance, after scaling by 1/|x̄_i|)."""
    unit_rows, _ = unit_examples(dataset)
    return np.abs(solution.W @ unit_rows.T) <= active_tol


def mgls(
    dataset: Dataset,
    m: int,
    v: np.ndarray | Sequence[float],
    loss_kind: LossKind | str,
    max_steps: int,
    seed: int,
    active_tol: float | None = None,
    fit_output_bias: bool = False,
) -> SearchResult:
    """
    First-improvement local search guided by the constraints that are tight
    at the current region optimum.

    Candidates are tried in this order and the first strict improvement is
    taken:

    1. the pattern with every tight bit flipped, when all its rows are feasible;
    2. one-bit neighbors that flip a tight bit;
    3. every other one-bit neighbor, in a seeded random order.
    """
    v = _check_v(v, m)
    active_tol = settings.active_tol if active_tol is None else active_tol
    evaluator = RegionEvaluator(dataset, v, loss_kind, fit_output_bias)
    oracle = evaluator.oracle
    shuffler = rng.stream(seed, "search")
    pattern = random_vertex(dataset, m, seed)
    current = evaluator.evaluate(pattern)
    trace = SearchTrace()
    trace.record(evaluator.key(pattern), current.loss, evaluator.qp_solves)

    for step in range(max_steps):
        before = evaluator.qp_solves
        tight = tight_bits(current, dataset, active_tol)
        moves = neighbor_moves(pattern, dataset, oracle)

        first: list[ActivationPattern] = []
        if tight.any():
            flipped = ActivationPattern(pattern.bits ^ tight.astype(np.uint8))
            if oracle.pattern_feasible(flipped):
                first.append(flipped)
        on_tight = [nbr for j, i, nbr in moves if tight[j, i]]
        rest = [nbr for j, i, nbr in moves if not tight[j, i]]
        order = shuffler.permutation(len(rest))
        candidates = first + on_tight + [rest[k] for k in order]

        moved = False
        seen: set[str] = set()
        for nbr in candidates:
            key = evaluator.key(nbr)
            if key in seen:
                continue
            seen.add(key)
            solution = evaluator.evaluate(nbr)
            if _improves(solution.loss, current.loss):
                pattern, current, moved = nbr, solution, True
                trace.record(key, solution.loss, evaluator.qp_solves - before)
                logger.info("mgls step %d: loss %.6g after %d candidates", step + 1, solution.loss, len(seen))
                break
        if not moved:
            trace.terminal_reason = TerminalReason.LOCAL_MIN
            break
    else:
        trace.terminal_reason = TerminalReason.MAX_STEPS

    return _finish(evaluator, pattern, current, trace)


def random_vertex_fit(
    dataset: Dataset,
    m: int,
    v0: np.ndarray | Sequence[float],
    loss_kind: LossKind | str,
    seed: int,
    max_rounds: int = 50,
    tol: float = 1e-10,
) -> SearchResult:
    """A random vertex followed by alternating optimization of (W, c) and (v, c) inside it."""
    v0 = _check_v(v0, m)
    pattern = random_vertex(dataset, m, seed)
    oracle = FeasibilityOracle(dataset)
    result = alternate_optimize(pattern, dataset, v0, loss_kind, max_rounds, tol, oracle.witnesses(pattern))
    net = ShallowReluNet(result.W, result.v, result.c, dataset.use_bias)
    trace = SearchTrace(terminal_reason=TerminalReason.LOCAL_MIN)
    key = canonical_key(pattern, unit_groups(result.v))
    for loss in result.history:
        trace.record(key, loss, 1)
    return SearchResult(net, result.loss, trace, pattern)


def initial_loss(
    dataset: Dataset,
    m: int,
    v: np.ndarray | Sequence[float],
    loss_kind: LossKind | str,
    seed: int,
    fit_output_bias: bool = False,
) -> float:
    """Region optimum at the vertex `gls` and `mgls` start from for this seed."""
    v = _check_v(v, m)
    evaluator = RegionEvaluator(dataset, v, loss_kind, fit_output_bias)
    solution = evaluator.evaluate(random_vertex(dataset, m, seed))
    return empirical_loss(evaluator.network(solution), dataset, loss_kind)

