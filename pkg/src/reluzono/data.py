"""
Datasets and everything that builds them.

A `Dataset` is an immutable pair of arrays (examples and labels) plus one
flag, `use_bias`, that says whether the first layer sees the examples in
homogeneous coordinates (a trailing 1 appended) or raw.

Almost every other module reads the data through `homogenize`, which
returns the examples as columns. Keeping the flag on the dataset, rather
than on the network or the solver, means a dataset file fully describes
the problem: there is no way to solve a bias-free reduction with a bias
by accident.

The rest of the module is generators:

* `gen_synthetic`             - Gaussian examples labelled by a random labelling network.
* `gen_collinear_dataset`     - five points on a line, the L1 discontinuity example.
* `gen_flat_dataset`          - four points in a plane of R^3, the "new vertex" example.
* `gen_set_cover_dataset`     - the set-cover reduction, in three variants.

Generators never repair data: if a construction is degenerate that is
usually the point of it.
"""
import functools
import itertools
import json
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from . import rng
from .config import settings
from .errors import ComplexityRefused, InvalidDeltas, InvalidParameter, SchemaMismatch
from .network import ShallowReluNet

logger = logging.getLogger(__name__)

DATASET_SCHEMA = "relu-zono-dataset/1"


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    N examples in R^d (rows of `x`) with real labels `y`.

    Arrays are copied and frozen on construction, so a Dataset can be
    shared between threads and used as a cache owner.
    """

    x: np.ndarray
    y: np.ndarray
    use_bias: bool = True

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise InvalidParameter(f"x must be a non-empty N x d matrix, got shape {x.shape}")
        if y.shape[0] != x.shape[0]:
            raise InvalidParameter(f"y has {y.shape[0]} entries for {x.shape[0]} examples")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidParameter("dataset entries must be finite")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "use_bias", bool(self.use_bias))

    def __repr__(self) -> str:
        return f"Dataset(n={self.n}, d={self.d}, use_bias={self.use_bias})"

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def d(self) -> int:
        return int(self.x.shape[1])

    @property
    def p(self) -> int:
        """Length of a first-layer weight vector for this dataset."""
        return self.d + 1 if self.use_bias else self.d

    @functools.cached_property
    def xbar(self) -> np.ndarray:
        """
        Homogenized examples as columns, p x N.

        Cached: computed once per dataset, and read-only like x itself.
        """
        cols = self.x.T
        if self.use_bias:
            cols = np.vstack([cols, np.ones((1, self.n))])
        out = np.ascontiguousarray(cols, dtype=float)
        out.flags.writeable = False
        return out

    def with_x(self, x: np.ndarray) -> "Dataset":
        return replace(self, x=x)

    def with_y(self, y: np.ndarray) -> "Dataset":
        return replace(self, y=y)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.x[idx], self.y[idx], self.use_bias)

    def same_as(self, other: "Dataset") -> bool:
        return (
            self.use_bias == other.use_bias
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )

    # serialization #################

    def to_json(self) -> dict[str, Any]:
        return {
            "schema": DATASET_SCHEMA,
            "d": self.d,
            "n": self.n,
            "use_bias": self.use_bias,
            "x": self.x.tolist(),
            "y": self.y.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "Dataset":
        if doc.get("schema") != DATASET_SCHEMA:
            raise SchemaMismatch(f"expected schema {DATASET_SCHEMA!r}, got {doc.get('schema')!r}")
        try:
            ds = cls(np.array(doc["x"], dtype=float), np.array(doc["y"], dtype=float), doc["use_bias"])
        except KeyError as e:
            raise SchemaMismatch(f"dataset document missing field {e}") from None
        if ds.n != doc.get("n", ds.n) or ds.d != doc.get("d", ds.d):
            raise SchemaMismatch("declared n/d do not match the arrays")
        return ds


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(dataset.to_json()))


def read_dataset(path: str | Path) -> Dataset:
    return Dataset.from_json(json.loads(Path(path).read_text()))


def homogenize(dataset: Dataset) -> np.ndarray:
    """
    The examples as columns x̄_i: (d+1) x N with a trailing row of ones when
    the dataset uses a bias, the transposed raw matrix otherwise.
    """
    return dataset.xbar


# general position ##################


@dataclass(frozen=True)
class PositionReport:
    """
    Result of a general-position check.

    `probabilistic` is set when the subsets were sampled rather than
    enumerated, in which case `general=True` only means no dependency was
    found among the sampled subsets.
    """

    general: bool
    probabilistic: bool
    checked: int
    min_ratio: float
    min_singular: float

    def __bool__(self) -> bool:
        return self.general


def _exact_rank(rows: np.ndarray) -> int:
    # floats convert to Fraction exactly, so this is the rank of the
    # stored numbers, not of a rounded version
    mat = [[Fraction(float(v)) for v in row] for row in rows]
    rank = 0
    n_cols = len(mat[0]) if mat else 0
    for col in range(n_cols):
        pivot = next((r for r in range(rank, len(mat)) if mat[r][col] != 0), None)
        if pivot is None:
            continue
        mat[rank], mat[pivot] = mat[pivot], mat[rank]
        for r in range(len(mat)):
            if r != rank and mat[r][col] != 0:
                f = mat[r][col] / mat[rank][col]
                mat[r] = [a - f * b for a, b in zip(mat[r], mat[rank])]
        rank += 1
    return rank


def _batched(it: Iterable[tuple[int, ...]], size: int) -> Iterator[list[tuple[int, ...]]]:
    batch: list[tuple[int, ...]] = []
    for item in it:
        batch.append(item)
        if len(batch) == size:
            yield batch
            batch = []
    if batch:
        yield batch


def check_general_position(
    dataset: Dataset,
    tol: float | None = None,
    *,
    exhaustive: bool = True,
    samples: int = 20_000,
    seed: int = 0,
) -> PositionReport:
    """
    Check that every subset of min(N, p) homogenized examples is linearly
    independent. With a bias this is general *affine* position of the raw
    examples; without one it is general linear position.

    Each subset is judged by its smallest singular value relative to the
    largest singular value of the whole matrix. Subsets that land within a
    factor of 10 of the tolerance are re-decided by an exact rational rank
    computation.
    """
    tol = settings.gp_tol if tol is None else tol
    xbar = homogenize(dataset)
    p, n = xbar.shape
    k = min(n, p)
    smax = float(np.linalg.norm(xbar, 2))
    if smax == 0.0:
        return PositionReport(False, False, 0, 0.0, 0.0)

    total = math.comb(n, k)
    subsets: Iterable[tuple[int, ...]]
    probabilistic = False
    if total > settings.subset_cap:
        if exhaustive:
            raise ComplexityRefused(
                f"C({n},{k}) = {total} subsets exceeds the cap of {settings.subset_cap}; "
                "pass exhaustive=False to sample"
            )
        gen = rng.stream(seed, "data")
        subsets = (tuple(sorted(gen.choice(n, size=k, replace=False))) for _ in range(samples))
        probabilistic = True
    else:
        subsets = itertools.combinations(range(n), k)

    examples = xbar.T
    checked = 0
    min_ratio = math.inf
    for batch in _batched(subsets, 4096):
        idx = np.array(batch, dtype=int)
        sv = np.linalg.svd(examples[idx], compute_uv=False)
        ratios = sv[:, -1] / smax
        checked += len(batch)
        for j in np.flatnonzero(ratios <= 10 * tol):
            r = float(ratios[j])
            if r >= tol / 10:
                dependent = _exact_rank(examples[idx[j]]) < k
                logger.debug("borderline subset %s ratio %.3g exact dependent=%s", batch[j], r, dependent)
            else:
                dependent = True
            if dependent:
                return PositionReport(False, probabilistic, checked, r, r * smax)
        min_ratio = min(min_ratio, float(ratios.min()))
    return PositionReport(True, probabilistic, checked, min_ratio, min_ratio * smax)


def is_general_position(dataset: Dataset, tol: float | None = None, **kwargs: Any) -> bool:
    return check_general_position(dataset, tol, **kwargs).general


def stability_radius(dataset: Dataset) -> float:
    """
    A perturbation radius under which no subset of min(N, p) homogenized
    examples can become dependent, so every subset keeps its orientation and
    the chamber set of the data cannot change.

    Moving each example by at most eps moves a k-column submatrix by at most
    sqrt(k) * eps in spectral norm, and a matrix stays full rank while the
    perturbation is below its smallest singular value. Half of that bound is
    returned. Zero for data that is not in general position.
    """
    report = check_general_position(dataset)
    if not report.general:
        return 0.0
    k = min(dataset.n, dataset.p)
    return 0.5 * report.min_singular / math.sqrt(k)


# perturbation ######################


@dataclass(frozen=True)
class PerturbationSpec:
    epsilon: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise InvalidParameter(f"epsilon must be positive, got {self.epsilon}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidParameter("seed must be a 64-bit unsigned integer")


def perturb(dataset: Dataset, spec: PerturbationSpec) -> Dataset:
    """
    Move every example by an independent vector drawn uniformly from the
    ball of radius `spec.epsilon`. Labels are untouched.
    """
    gen = rng.stream(spec.seed, "data")
    n, d = dataset.x.shape
    directions = gen.standard_normal((n, d))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radii = spec.epsilon * gen.random(n) ** (1.0 / d)
    return dataset.with_x(dataset.x + directions / norms * radii[:, None])


# synthetic data ####################


def gen_synthetic_task(d: int, m_gen: int, seed: int) -> tuple[Dataset, ShallowReluNet]:
    """
    N = (d+1) * m_gen standard normal examples, labelled by a random
    network with m_gen units whose parameters are all standard normal.

    Returns the dataset and the labelling network, so callers can check the labels.
    """
    if d < 1 or m_gen < 1:
        raise InvalidParameter("d and m_gen must be positive")
    gen = rng.stream(seed, "data")
    n = (d + 1) * m_gen
    x = gen.standard_normal((n, d))
    target = ShallowReluNet(
        W=gen.standard_normal((m_gen, d + 1)),
        v=gen.standard_normal(m_gen),
        c=float(gen.standard_normal()),
    )
    xbar = np.vstack([x.T, np.ones((1, n))])
    return Dataset(x, target.outputs(xbar), use_bias=True), target


def gen_synthetic(d: int, m_gen: int, seed: int) -> Dataset:
    return gen_synthetic_task(d, m_gen, seed)[0]


# small degenerate examples #########


def _check_epsilon(epsilon: float) -> None:
    if not (epsilon >= 0 and math.isfinite(epsilon)):
        raise InvalidParameter(f"epsilon must be nonnegative, got {epsilon}")


def gen_collinear_dataset(epsilon: float = 0.0) -> Dataset:
    """
    Five examples on the x_2 = 0 line of R^2 with labels (1, 2, 2.5, 4, 5).

    With an affine ReLU and L1 loss the best loss is 0.1 (all examples
    active, the middle one missed by 0.5). Lifting the middle example to
    (3, epsilon) lets the same activation region fit every label exactly,
    however small epsilon is.
    """
    _check_epsilon(epsilon)
    x = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, epsilon], [4.0, 0.0], [5.0, 0.0]])
    return Dataset(x, np.array([1.0, 2.0, 2.5, 4.0, 5.0]), use_bias=True)


def gen_flat_dataset(epsilon: float = 0.0) -> Dataset:
    """
    Four examples in the x_3 = 0 plane of R^3, labels (4, 3, 2, 1), no bias.

    The best L1 loss of a single linear ReLU is 1.25. Lifting the second
    example to (2, 1, epsilon) creates an all-active activation region that
    does not exist for the flat data, with loss 0.625.
    """
    _check_epsilon(epsilon)
    x = np.array([[-1.0, 0.0, 0.0], [2.0, 1.0, epsilon], [-1.0, 1.0, 0.0], [-1.0, -1.0, 0.0]])
    return Dataset(x, np.array([4.0, 3.0, 2.0, 1.0]), use_bias=False)


# set cover reduction ###############


@dataclass(frozen=True)
class SetCoverInstance:
    """
    A collection of M subsets of the universe {1..universe_size}, and a
    target cover size t.

    Every element must lie in at least one subset: the training-set encoding
    has no way to express a universe that cannot be covered.
    """

    universe_size: int
    subsets: tuple[frozenset[int], ...]
    t: int = 1

    def __post_init__(self) -> None:
        subsets = tuple(frozenset(int(u) for u in s) for s in self.subsets)
        object.__setattr__(self, "subsets", subsets)
        if self.universe_size < 1:
            raise InvalidParameter("universe_size must be positive")
        if not subsets:
            raise InvalidParameter("a set cover instance needs at least one subset")
        for s in subsets:
            if not s or not s <= set(range(1, self.universe_size + 1)):
                raise InvalidParameter(f"subset {sorted(s)} is empty or outside the universe")
        uncovered = set(range(1, self.universe_size + 1)).difference(*subsets)
        if uncovered:
            raise InvalidParameter(f"elements {sorted(uncovered)} are in no subset")
        if self.t < 1:
            raise InvalidParameter("t must be positive")

    @property
    def m(self) -> int:
        return len(self.subsets)

    @property
    def gamma(self) -> float:
        return 0.01 / self.m**2

    @property
    def d(self) -> int:
        return self.m + 2

    @property
    def n(self) -> int:
        return self.universe_size + self.m + 2

    def covers(self, selection: Iterable[int]) -> bool:
        """True if the subsets at the given (0-based) indices cover the universe."""
        covered: set[int] = set()
        for i in selection:
            covered |= self.subsets[i]
        return len(covered) == self.universe_size

    def to_json(self) -> dict[str, Any]:
        return {"universe": self.universe_size, "subsets": [sorted(s) for s in self.subsets], "t": self.t}

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "SetCoverInstance":
        try:
            return cls(int(doc["universe"]), tuple(frozenset(s) for s in doc["subsets"]), int(doc.get("t", 1)))
        except KeyError as e:
            raise SchemaMismatch(f"set cover document missing field {e}") from None


def min_cover_size(instance: SetCoverInstance) -> int:
    """Smallest number of subsets covering the universe, by brute force."""
    for size in range(1, instance.m):
        for combo in itertools.combinations(range(instance.m), size):
            if instance.covers(combo):
                return size
    # all of them always do
    return instance.m


def find_cover(instance: SetCoverInstance, size: int) -> tuple[int, ...] | None:
    for k in range(1, min(size, instance.m) + 1):
        for combo in itertools.combinations(range(instance.m), k):
            if instance.covers(combo):
                return combo
    return None


class SetCoverVariant(str, Enum):
    DEGENERATE = "degenerate"
    ADVERSARIAL = "adversarial_perturbed"
    GENERAL_POSITION = "general_position"


# coordinate layout of the reduction
GAMMA_AXIS = 0
ONE_AXIS = 1


def _subset_axis(i: int) -> int:
    return 2 + i


def gen_set_cover_dataset(
    instance: SetCoverInstance,
    variant: SetCoverVariant | str = SetCoverVariant.DEGENERATE,
    delta1: float | None = None,
    delta2: float | None = None,
    epsilon: float = 1e-3,
    seed: int = 0,
) -> Dataset:
    """
    Encode a set-cover instance as a bias-free single-ReLU training set.

    Coordinates: e_gamma, e_1, then one axis per subset (d = M + 2).
    Examples, in order:

        (e_gamma, gamma)                       one
        (e_1, 1)                               one
        (e_gamma + e_Ti, gamma)                one per subset
        (e_1 + sum_{Ti containing u} e_Ti, 0)  one per universe element

    Elements that belong to exactly the same subsets produce identical
    rows; they are kept, since the loss counts them with multiplicity.

    `general_position` subtracts uniform noise in [delta1, delta2]^d from
    each element example; `adversarial_perturbed` adds epsilon along the
    first subset's axis to each element example.
    """
    variant = SetCoverVariant(variant)
    d = instance.d
    if d > settings.set_cover_max_d:
        raise ComplexityRefused(f"reduction would have d={d} > set_cover_max_d={settings.set_cover_max_d}")
    gamma = instance.gamma

    rows: list[np.ndarray] = []
    labels: list[float] = []

    def axis(i: int) -> np.ndarray:
        e = np.zeros(d)
        e[i] = 1.0
        return e

    rows.append(axis(GAMMA_AXIS))
    labels.append(gamma)
    rows.append(axis(ONE_AXIS))
    labels.append(1.0)
    for i in range(instance.m):
        rows.append(axis(GAMMA_AXIS) + axis(_subset_axis(i)))
        labels.append(gamma)
    elements = []
    for u in range(1, instance.universe_size + 1):
        row = axis(ONE_AXIS)
        for i, s in enumerate(instance.subsets):
            if u in s:
                row = row + axis(_subset_axis(i))
        elements.append(row)
        labels.append(0.0)
    element_x = np.array(elements)

    if variant is SetCoverVariant.GENERAL_POSITION:
        if delta1 is None:
            delta1 = 0.25 / (2 * d)
        if delta2 is None:
            delta2 = 0.5 / (2 * d)
        if not 0 < delta1 < delta2 < 1 / (2 * d):
            raise InvalidDeltas(f"need 0 < delta1 < delta2 < 1/(2d) = {1 / (2 * d)}, got {delta1}, {delta2}")
        gen = rng.stream(seed, "data")
        element_x = element_x - gen.uniform(delta1, delta2, size=element_x.shape)
    elif variant is SetCoverVariant.ADVERSARIAL:
        if not epsilon > 0:
            raise InvalidParameter("the adversarial perturbation needs epsilon > 0")
        element_x = element_x + epsilon * axis(_subset_axis(0))

    x = np.vstack([np.array(rows), element_x])
    return Dataset(x, np.array(labels), use_bias=False)


def cover_weights(
    instance: SetCoverInstance,
    cover: Iterable[int],
    variant: SetCoverVariant | str = SetCoverVariant.DEGENERATE,
) -> np.ndarray:
    """
    The weight vector a cover S induces: w_gamma = gamma, w_1 = 1, and a
    negative weight on each chosen subset axis (-1 for the exact
    construction, -2 for the noisy general-position one, whose element
    examples are pulled slightly toward the origin). MSE at these weights is
    |S| * gamma^2 / N.
    """
    variant = SetCoverVariant(variant)
    w = np.zeros(instance.d)
    w[GAMMA_AXIS] = instance.gamma
    w[ONE_AXIS] = 1.0
    weight = -2.0 if variant is SetCoverVariant.GENERAL_POSITION else -1.0
    for i in cover:
        w[_subset_axis(i)] = weight
    return w


def adversarial_weights(instance: SetCoverInstance, epsilon: float) -> np.ndarray:
    """Weights reaching MSE gamma^2 / N on the adversarially perturbed data, whatever the cover size."""
    w = np.zeros(instance.d)
    w[GAMMA_AXIS] = instance.gamma
    w[ONE_AXIS] = 1.0
    w[_subset_axis(0)] = -1.0 / epsilon
    return w


def write_set_cover(instance: SetCoverInstance, path: str | Path) -> None:
    Path(path).write_text(json.dumps(instance.to_json()))


def read_set_cover(path: str | Path) -> SetCoverInstance:
    return SetCoverInstance.from_json(json.loads(Path(path).read_text()))
