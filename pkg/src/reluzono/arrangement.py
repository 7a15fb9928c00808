"""
Activation patterns and the hyperplane arrangement behind them.

Every homogenized example x̄_i defines a hyperplane {w : w.x̄_i = 0} in the
space of one unit's weights. The chambers of that arrangement are exactly
the sign patterns a single unit can realize on the data, and they are in
one-to-one correspondence with the vertices of the zonotope generated by
the x̄_i. An m-unit activation pattern picks one chamber per unit, i.e. a
vertex of the m-fold Cartesian power of that zonotope.

So the combinatorial side of training lives here:

* `pattern_of_weights`  - the pattern a weight matrix realizes.
* `row_feasible`        - can a single row be realized at all (with a witness)?
* `enumerate_chambers`  - every realizable row, by inserting one hyperplane at a time.
* `neighbors`           - one-bit flips that stay realizable (edges of the zonotope).
* `canonical_key`       - a key that forgets the order of interchangeable units.

Row feasibility is the only place an LP is solved. It uses the alternative
system from Gordan's theorem: strict feasibility of s_i w.x̄_i > 0 for all i
fails exactly when some convex combination of the signed examples is
zero. The phase one LP for that system has p + 1 rows whatever N is, and
when it reports the system empty its duals give a witness directly.
"""
import itertools
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .config import settings
from .data import Dataset, homogenize
from .errors import ComplexityRefused, InvalidParameter, SchemaMismatch
from .lp import phase_one, solve_lp

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ActivationPattern:
    """
    An m x N binary matrix: bit (j, i) is 1 when unit j is active on example i.

    Patterns are hashable and compare by value, so they can be used as
    dictionary keys and in sets.
    """

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.array(self.bits)
        if bits.ndim == 1:
            bits = bits.reshape(1, -1)
        if bits.ndim != 2 or bits.size == 0:
            raise InvalidParameter(f"pattern must be a non-empty m x N matrix, got shape {bits.shape}")
        if not np.all((bits == 0) | (bits == 1)):
            raise InvalidParameter("pattern entries must be 0 or 1")
        bits = bits.astype(np.uint8)
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @property
    def m(self) -> int:
        return int(self.bits.shape[0])

    @property
    def n(self) -> int:
        return int(self.bits.shape[1])

    def row(self, j: int) -> np.ndarray:
        return self.bits[j]

    def flip(self, j: int, i: int) -> "ActivationPattern":
        bits = self.bits.copy()
        bits[j, i] ^= 1
        return ActivationPattern(bits)

    def hex(self) -> str:
        """Row-major bits, packed most significant bit first, as hex."""
        return np.packbits(self.bits.reshape(-1)).tobytes().hex()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ActivationPattern):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash((self.bits.shape, self.bits.tobytes()))

    def __repr__(self) -> str:
        return f"ActivationPattern(m={self.m}, n={self.n}, bits={self.hex()})"

    def to_json(self) -> dict[str, Any]:
        return {"m": self.m, "n": self.n, "bits": self.hex()}

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "ActivationPattern":
        try:
            m, n = int(doc["m"]), int(doc["n"])
            packed = np.frombuffer(bytes.fromhex(doc["bits"]), dtype=np.uint8)
        except (KeyError, ValueError) as e:
            raise SchemaMismatch(f"bad pattern document: {e}") from None
        bits = np.unpackbits(packed)[: m * n]
        if bits.shape[0] != m * n:
            raise SchemaMismatch("pattern bits shorter than m * n")
        return cls(bits.reshape(m, n))


def pattern_of_weights(W: np.ndarray, dataset: Dataset) -> ActivationPattern:
    """
    The activation pattern of weights W (m x p) on the dataset: 1 where
    w_j.x̄_i is strictly positive, 0 otherwise (exact zeros included).
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[1] != dataset.p:
        raise InvalidParameter(f"W has {W.shape[1]} columns, dataset has p={dataset.p}")
    return ActivationPattern((W @ homogenize(dataset) > 0).astype(np.uint8))


# row feasibility ###################


def unit_examples(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """
    Homogenized examples as rows scaled to unit length (N x p), and their
    original norms. Zero examples stay zero and keep norm 0.
    """
    xbar_t = homogenize(dataset).T
    norms = np.linalg.norm(xbar_t, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return xbar_t / safe[:, None], norms


def _witness_lp(signed: np.ndarray) -> np.ndarray | None:
    # primal fallback: signed w >= 1, w free
    try:
        sol = solve_lp(np.zeros(signed.shape[1]), A_ub=-signed, b_ub=-np.ones(signed.shape[0]))
    except Exception as e:  # Infeasible or numerical trouble, either way no witness
        logger.debug("primal witness LP failed: %s", e)
        return None
    return sol.x


def sign_feasible(unit_rows: np.ndarray, row: np.ndarray) -> tuple[bool, np.ndarray | None]:
    """
    Decide whether some w has (2 row_i - 1) w.u_i > 0 for every unit example
    u_i, returning a witness with margin at least 1 when it does.
    """
    row = np.asarray(row)
    n, p = unit_rows.shape
    signed = (2.0 * row - 1.0)[:, None] * unit_rows
    if np.any(np.all(unit_rows == 0, axis=1)):
        # a zero example can never be strictly on either side
        return False, None

    # alternative system: y >= 0, sum y_i a_i = 0, sum y_i = 1
    A = np.vstack([signed.T, np.ones((1, n))])
    b = np.zeros(p + 1)
    b[-1] = 1.0
    result = phase_one(A, b)
    if result.value <= settings.tol_feas:
        return False, None

    pi_a, pi_1 = result.duals[:p], result.duals[p]
    witness = -pi_a / pi_1 if pi_1 > 0 else None
    if witness is None or (signed @ witness).min() <= 0:
        witness = _witness_lp(signed)
        if witness is None or (signed @ witness).min() <= 0:
            logger.warning("row judged feasible but no witness verified; treating as infeasible")
            return False, None
    # rescale so the smallest margin is exactly 1
    return True, witness / (signed @ witness).min()


def row_feasible(row: Sequence[int] | np.ndarray, dataset: Dataset) -> tuple[bool, np.ndarray | None]:
    """
    Is there a weight vector w with w.x̄_i > 0 exactly where row_i = 1?

    The constraint set is a cone, so strict feasibility is the same as
    feasibility with every margin at least 1. Returns (feasible, witness).
    """
    row = np.asarray(row, dtype=np.uint8).reshape(-1)
    if row.shape[0] != dataset.n:
        raise InvalidParameter(f"row has {row.shape[0]} bits for {dataset.n} examples")
    unit_rows, _ = unit_examples(dataset)
    if dataset.use_bias and (row.all() or not row.any()):
        # the bias coordinate alone settles the constant rows
        w = np.zeros(dataset.p)
        w[-1] = 1.0 if row.all() else -1.0
        return True, w
    return sign_feasible(unit_rows, row)


class FeasibilityOracle:
    """
    Memoized `row_feasible` for one dataset.

    Searches ask about the same rows over and over (every neighbor of every
    visited pattern), so answers and witnesses are kept for the lifetime of
    the oracle. Safe to share between threads.
    """

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self._cache: dict[bytes, tuple[bool, np.ndarray | None]] = {}
        self._lock = threading.Lock()
        self.lp_solves = 0

    def __call__(self, row: np.ndarray) -> tuple[bool, np.ndarray | None]:
        key = np.asarray(row, dtype=np.uint8).tobytes()
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        answer = row_feasible(row, self.dataset)
        with self._lock:
            self._cache[key] = answer
            self.lp_solves += 1
        return answer

    def feasible(self, row: np.ndarray) -> bool:
        return self(row)[0]

    def witness(self, row: np.ndarray) -> np.ndarray:
        ok, w = self(row)
        if not ok or w is None:
            raise InvalidParameter("row is not feasible")
        return w

    def pattern_feasible(self, pattern: ActivationPattern) -> bool:
        return all(self.feasible(pattern.row(j)) for j in range(pattern.m))

    def witnesses(self, pattern: ActivationPattern) -> np.ndarray:
        return np.vstack([self.witness(pattern.row(j)) for j in range(pattern.m)])


# chambers ##########################


@dataclass(frozen=True, eq=False)
class ChamberSet:
    """
    Every single-unit pattern the dataset admits, sorted lexicographically,
    each with a weight vector that realizes it strictly.
    """

    patterns: np.ndarray  # K x N, uint8
    witnesses: np.ndarray  # K x p

    def __len__(self) -> int:
        return int(self.patterns.shape[0])

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        return iter(zip(self.patterns, self.witnesses))

    def pattern_set(self) -> set[tuple[int, ...]]:
        return {tuple(int(b) for b in row) for row in self.patterns}

    def to_json(self) -> list[dict[str, Any]]:
        return [
            {**ActivationPattern(row).to_json(), "witness": w.tolist()}
            for row, w in zip(self.patterns, self.witnesses)
        ]

    @classmethod
    def from_json(cls, doc: list[dict[str, Any]]) -> "ChamberSet":
        if not doc:
            raise SchemaMismatch("a chamber set has at least one chamber")
        rows = [ActivationPattern.from_json(entry).bits[0] for entry in doc]
        return cls(np.array(rows, dtype=np.uint8), np.array([entry["witness"] for entry in doc], dtype=float))


def chamber_count_bound(n: int, p: int) -> int:
    """
    Number of chambers of a central arrangement of n hyperplanes in general
    position in R^p: 2 * sum_{k<p} C(n-1, k). Degenerate data has fewer.
    """
    return 2 * sum(math.comb(n - 1, k) for k in range(p))


def _map(fn: Any, items: Sequence[Any]) -> list[Any]:
    if settings.workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def enumerate_chambers(dataset: Dataset) -> ChamberSet:
    """
    All feasible single-unit rows, by incremental hyperplane insertion.

    Start from the two patterns of the first example. Inserting example k
    splits some chambers in two: each surviving pattern is extended by both
    bits, and an extension is kept when it is still feasible on the first k
    examples. The extension that agrees with the current witness is feasible
    for free; only the other one needs an LP.

    Raises `ComplexityRefused` as soon as the number of partial chambers
    exceeds `settings.chamber_cap`.
    """
    unit_rows, _ = unit_examples(dataset)
    n = dataset.n

    first: list[tuple[np.ndarray, np.ndarray]] = []
    for bit in (0, 1):
        ok, w = sign_feasible(unit_rows[:1], np.array([bit]))
        if ok and w is not None:
            first.append((np.array([bit], dtype=np.uint8), w))
    chambers = first

    for k in range(1, n):
        prefix = unit_rows[: k + 1]
        grown: list[tuple[np.ndarray, np.ndarray]] = []
        to_test: list[np.ndarray] = []
        for row, w in chambers:
            side = float(w @ unit_rows[k])
            free_bit = 1 if side > 0 else 0
            if side != 0:
                grown.append((np.append(row, free_bit).astype(np.uint8), w))
                to_test.append(np.append(row, 1 - free_bit).astype(np.uint8))
            else:
                to_test.append(np.append(row, 0).astype(np.uint8))
                to_test.append(np.append(row, 1).astype(np.uint8))

        results = _map(lambda r: sign_feasible(prefix, r), to_test)
        for row, (ok, w) in zip(to_test, results):
            if ok and w is not None:
                grown.append((row, w))
        if len(grown) > settings.chamber_cap:
            raise ComplexityRefused(
                f"more than {settings.chamber_cap} chambers after inserting {k + 1} of {n} examples"
            )
        chambers = grown
        logger.debug("inserted example %d: %d chambers", k + 1, len(chambers))

    chambers.sort(key=lambda rw: rw[0].tobytes())
    return ChamberSet(
        np.array([r for r, _ in chambers], dtype=np.uint8).reshape(len(chambers), n),
        np.array([w for _, w in chambers], dtype=float).reshape(len(chambers), dataset.p),
    )


def brute_force_chambers(dataset: Dataset) -> set[tuple[int, ...]]:
    """Every row in {0,1}^N that passes `row_feasible`. Exponential in N; for checking."""
    if dataset.n > 20:
        raise ComplexityRefused("brute force over 2^N rows is limited to N <= 20")
    found = set()
    for bits in itertools.product((0, 1), repeat=dataset.n):
        if row_feasible(np.array(bits), dataset)[0]:
            found.add(bits)
    return found


# neighbors and keys ################


def neighbors(
    pattern: ActivationPattern, dataset: Dataset, oracle: FeasibilityOracle | None = None
) -> list[ActivationPattern]:
    """
    Every pattern one bit away whose flipped row is still feasible, in
    row-major order of the flipped bit. Flips that land on an infeasible
    row are left out.
    """
    return [nbr for _, _, nbr in neighbor_moves(pattern, dataset, oracle)]


def neighbor_moves(
    pattern: ActivationPattern, dataset: Dataset, oracle: FeasibilityOracle | None = None
) -> list[tuple[int, int, ActivationPattern]]:
    """Like `neighbors`, but also says which bit (unit, example) was flipped."""
    if pattern.n != dataset.n:
        raise InvalidParameter(f"pattern has {pattern.n} columns for {dataset.n} examples")
    oracle = oracle or FeasibilityOracle(dataset)
    moves = []
    for j in range(pattern.m):
        for i in range(pattern.n):
            row = pattern.row(j).copy()
            row[i] ^= 1
            if oracle.feasible(row):
                moves.append((j, i, pattern.flip(j, i)))
    return moves


def unit_groups(v: Iterable[float]) -> list[list[int]]:
    """
    Partition unit indices by output weight. Units in one group can be
    permuted without changing the network. Groups are ordered by their
    first unit.
    """
    groups: dict[float, list[int]] = {}
    for j, value in enumerate(v):
        groups.setdefault(float(value), []).append(j)
    return list(groups.values())


def canonical_order(pattern: ActivationPattern, groups: Sequence[Sequence[int]]) -> np.ndarray:
    """
    A unit permutation `perm` such that `pattern.bits[perm]` has the rows of
    every group sorted lexicographically, in the slots the group occupies.
    """
    perm = np.arange(pattern.m)
    for group in groups:
        slots = sorted(group)
        ordered = sorted(slots, key=lambda j: (pattern.row(j).tobytes(), j))
        perm[slots] = ordered
    return perm


def canonical_key(pattern: ActivationPattern, groups: Sequence[Sequence[int]]) -> str:
    """
    Hex key of the pattern with rows sorted within each group, so patterns
    that differ only by permuting interchangeable units share a key.
    """
    return ActivationPattern(pattern.bits[canonical_order(pattern, groups)]).hex()
