"""
Exact interpolation with 2 * ceil(N / (d+1)) units in polynomial time.

Sort the examples by their last coordinate and cut them into chunks of
d + 1. Chunk k gets a pair of units

    f_k(x) = relu(w_1 . x̄) - relu(w_2 . x̄),   w_1 = w + beta u,  w_2 = beta u

where w interpolates the chunk's residual labels, u is a direction that is
negative on every earlier chunk and greater than 1 on the rest, and beta is
large enough that both units are off on earlier chunks and on everywhere
else. On the chunk itself the pair reduces to w . x̄, on earlier chunks it
is 0. Later chunks see the pair's output through their own residuals, so
fitting proceeds left to right without undoing any earlier chunk.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import settings
from .data import Dataset, homogenize
from .errors import BoundaryTie, InvalidParameter, NotGeneralPosition
from .network import ShallowReluNet

logger = logging.getLogger(__name__)

# headroom on the unit margin of the separating direction
MARGIN_HEADROOM = 1e-3


@dataclass(frozen=True, eq=False)
class ChunkPlan:
    """
    How the examples were cut up: `order` sorts them by last coordinate,
    chunk k is order[start:end] for `chunk_bounds[k]`, and `alphas[k]` is the
    threshold on the last coordinate that separates it from earlier chunks.
    """

    order: np.ndarray
    chunk_bounds: list[tuple[int, int]]
    alphas: list[float]

    @property
    def n_chunks(self) -> int:
        return len(self.chunk_bounds)

    def chunk(self, k: int) -> np.ndarray:
        start, end = self.chunk_bounds[k]
        return self.order[start:end]


def plan_chunks(dataset: Dataset) -> ChunkPlan:
    """
    Sort by the last raw coordinate (stable), cut into chunks of d + 1 and
    place each threshold at the midpoint of the gap before its chunk. The
    first threshold sits 1 below the smallest coordinate.
    """
    coord = dataset.x[:, -1]
    order = np.argsort(coord, kind="stable")
    size = dataset.d + 1
    bounds = [(start, min(start + size, dataset.n)) for start in range(0, dataset.n, size)]
    alphas = []
    for k, (start, _) in enumerate(bounds):
        if k == 0:
            alphas.append(float(coord[order[0]]) - 1.0)
            continue
        before, first = float(coord[order[start - 1]]), float(coord[order[start]])
        if before == first:
            raise BoundaryTie(
                f"examples {order[start - 1]} and {order[start]} share last coordinate {first} across a chunk boundary"
            )
        alphas.append(0.5 * (before + first))
    return ChunkPlan(order, bounds, alphas)


def chunked_fit(
    dataset: Dataset,
    on_chunk: Callable[[int, ShallowReluNet], None] | None = None,
) -> tuple[ShallowReluNet, ChunkPlan]:
    """
    Build a network with exactly 2 * ceil(N / (d+1)) units that fits every
    label, one pair of units per chunk.

    `on_chunk(k, net)` is called after chunk k is fitted with the network
    built so far.

    Needs a bias (`use_bias`), examples in general position within each
    chunk (`NotGeneralPosition` otherwise) and no tie in the last
    coordinate across a chunk boundary (`BoundaryTie`).
    """
    if not dataset.use_bias:
        raise InvalidParameter("chunked_fit needs a dataset with use_bias=True")
    plan = plan_chunks(dataset)
    xbar = homogenize(dataset)  # p x N
    d = dataset.d

    units: list[np.ndarray] = []
    weights: list[float] = []

    def current() -> ShallowReluNet:
        if not units:
            return ShallowReluNet(np.zeros((1, d + 1)), np.zeros(1), 0.0, True)
        return ShallowReluNet(np.array(units), np.array(weights), 0.0, True)

    for k in range(plan.n_chunks):
        chunk = plan.chunk(k)
        start, _ = plan.chunk_bounds[k]
        earlier = plan.order[:start]
        later_or_here = plan.order[start:]

        X_k = xbar[:, chunk].T
        if np.linalg.matrix_rank(X_k) < chunk.shape[0]:
            raise NotGeneralPosition(f"chunk {k} examples {chunk.tolist()} are affinely dependent")
        residual = dataset.y[chunk] - current().outputs(xbar[:, chunk])
        w = np.linalg.lstsq(X_k, residual, rcond=None)[0]

        u = np.zeros(d + 1)
        u[d - 1] = 1.0
        u[d] = -plan.alphas[k]
        seen = plan.order[: start + chunk.shape[0]]
        u_tilde = u * (1.0 + MARGIN_HEADROOM) / np.abs(u @ xbar[:, seen]).min()

        beta = max(
            float(np.maximum(w @ xbar[:, earlier], 0.0).max(initial=0.0)),
            float(np.maximum(-(w @ xbar[:, later_or_here]), 0.0).max(initial=0.0)),
        )
        units += [w + beta * u_tilde, beta * u_tilde]
        weights += [1.0, -1.0]
        if on_chunk is not None:
            on_chunk(k, current())
        logger.debug("chunk %d: %d examples, alpha %.4g, beta %.4g", k, chunk.shape[0], plan.alphas[k], beta)

    net = current()
    assert net.m == 2 * math.ceil(dataset.n / (d + 1))
    worst = float(np.abs(net.outputs(xbar) - dataset.y).max())
    if worst > settings.fit_tol * (1.0 + float(np.abs(dataset.y).max())):
        logger.warning("chunked fit residual %.3g exceeds tolerance; the data may be badly conditioned", worst)
    return net, plan
