"""
Per-example losses.

Each loss is a small strategy object, in the same spirit as a drawing
backend: the solvers and the network code only ever talk to the `Loss`
interface, and `get_loss` maps the user-facing name to an instance.

All three losses are convex in the prediction, which is what makes the
per-region problems convex once the activation pattern is fixed.
"""
import abc
from enum import Enum

import numpy as np

from .errors import InvalidParameter


class LossKind(str, Enum):
    MSE = "mse"
    L1 = "l1"
    LOGISTIC = "logistic"


class Loss(abc.ABC):
    """
    A convex per-example loss l(prediction, label).

    `value` and `derivative` are vectorized over examples; the empirical
    loss is always the plain mean of `value`.
    """

    kind: LossKind

    @abc.abstractmethod
    def value(self, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Per-example loss values."""

    @abc.abstractmethod
    def derivative(self, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
        """
        Derivative with respect to the prediction.

        Where the loss is not differentiable (L1 at a zero residual) this
        returns 0, which is a valid subgradient.
        """

    def second_derivative(self, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{self.kind.value} loss is not twice differentiable")

    def mean(self, pred: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.value(pred, y)))


class SquaredLoss(Loss):
    kind = LossKind.MSE

    def value(self, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
        return (pred - y) ** 2

    def derivative(self, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
        return 2.0 * (pred - y)

    def second_derivative(self, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.full_like(np.asarray(pred, dtype=float), 2.0)


class AbsoluteLoss(Loss):
    kind = LossKind.L1

    def value(self, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.abs(pred - y)

    def derivative(self, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.sign(pred - y)


class LogisticLoss(Loss):
    """
    Cross entropy on a logit: softplus(pred) - y * pred, for labels in [0, 1].

    Written with logaddexp so large logits neither overflow nor lose the
    linear tail.
    """

    kind = LossKind.LOGISTIC

    def value(self, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.logaddexp(0.0, pred) - y * pred

    def derivative(self, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
        return _sigmoid(pred) - y

    def second_derivative(self, pred: np.ndarray, y: np.ndarray) -> np.ndarray:
        s = _sigmoid(pred)
        return s * (1.0 - s)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    # exp(-|t|) never overflows
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


_LOSSES: dict[LossKind, Loss] = {
    LossKind.MSE: SquaredLoss(),
    LossKind.L1: AbsoluteLoss(),
    LossKind.LOGISTIC: LogisticLoss(),
}


def get_loss(kind: "LossKind | str | Loss") -> Loss:
    if isinstance(kind, Loss):
        return kind
    try:
        return _LOSSES[LossKind(kind)]
    except ValueError:
        raise InvalidParameter(f"unknown loss {kind!r}, expected one of mse, l1, logistic") from None
