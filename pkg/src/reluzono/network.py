"""
The shallow ReLU network, its loss, and the gradient-descent baseline.

    f(x) = v . relu(W x̄) + c

`W` is m x p, acting on homogenized examples when `use_bias` is set (the
last column is then the first-layer bias), `v` has one entry per hidden
unit and `c` is a scalar output bias.

Everything here takes the activation at exactly zero as inactive, both
in the forward pass and in the ReLU derivative, so that gradient descent
and `pattern_of_weights` agree on which units are on.
"""
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable

import numpy as np

from . import rng
from .config import settings
from .errors import DivergenceDetected, InvalidParameter, LabelsNotBinary, SchemaMismatch
from .losses import Loss, LossKind, get_loss

# this is needed because of circular references
if TYPE_CHECKING:
    from typing_extensions import Self

    from .data import Dataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ShallowReluNet:
    W: np.ndarray
    v: np.ndarray
    c: float = 0.0
    use_bias: bool = True

    def __post_init__(self) -> None:
        W = np.array(self.W, dtype=float)
        v = np.array(self.v, dtype=float).reshape(-1)
        if W.ndim == 1:
            W = W.reshape(1, -1)
        if W.ndim != 2 or W.shape[0] != v.shape[0] or W.shape[0] < 1:
            raise InvalidParameter(f"W is {W.shape} but v has {v.shape[0]} entries")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(v)) and np.isfinite(self.c)):
            raise InvalidParameter("network parameters must be finite")
        W.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "use_bias", bool(self.use_bias))

    @property
    def m(self) -> int:
        return int(self.W.shape[0])

    @property
    def p(self) -> int:
        return int(self.W.shape[1])

    def with_params(self, **changes: Any) -> "Self":
        return replace(self, **changes)

    def preactivations(self, xbar: np.ndarray) -> np.ndarray:
        """W x̄ for every column of `xbar`, m x N."""
        return self.W @ xbar

    def outputs(self, xbar: np.ndarray) -> np.ndarray:
        """Network output for each homogenized example (columns of `xbar`)."""
        return self.v @ np.maximum(self.preactivations(xbar), 0.0) + self.c

    def check_dataset(self, dataset: "Dataset") -> None:
        if dataset.p != self.p or dataset.use_bias != self.use_bias:
            raise InvalidParameter(
                f"network expects p={self.p} (use_bias={self.use_bias}), "
                f"dataset has p={dataset.p} (use_bias={dataset.use_bias})"
            )

    # serialization #################

    def to_json(self) -> dict[str, Any]:
        return {
            "m": self.m,
            "p": self.p,
            "W": self.W.tolist(),
            "v": self.v.tolist(),
            "c": self.c,
            "use_bias": self.use_bias,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "ShallowReluNet":
        try:
            net = cls(np.array(doc["W"], dtype=float), np.array(doc["v"], dtype=float), doc["c"], doc["use_bias"])
        except KeyError as e:
            raise SchemaMismatch(f"checkpoint missing field {e}") from None
        if net.m != doc.get("m", net.m) or net.p != doc.get("p", net.p):
            raise SchemaMismatch("declared m/p do not match W")
        return net


def write_checkpoint(net: ShallowReluNet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(net.to_json()))


def read_checkpoint(path: str | Path) -> ShallowReluNet:
    return ShallowReluNet.from_json(json.loads(Path(path).read_text()))


def pm_half(m: int) -> np.ndarray:
    """Output weights with the first half +1 and the rest -1 (the extra unit is +1 when m is odd)."""
    if m < 1:
        raise InvalidParameter("m must be positive")
    return np.where(np.arange(m) < (m + 1) // 2, 1.0, -1.0)


def forward(net: ShallowReluNet, x: np.ndarray) -> float:
    """Network output on a single raw example."""
    x = np.asarray(x, dtype=float).reshape(-1)
    xbar = np.append(x, 1.0) if net.use_bias else x
    if xbar.shape[0] != net.p:
        raise InvalidParameter(f"example has {x.shape[0]} coordinates, network expects p={net.p}")
    return float(net.outputs(xbar[:, None])[0])


def predict(net: ShallowReluNet, dataset: "Dataset") -> np.ndarray:
    net.check_dataset(dataset)
    return net.outputs(dataset.xbar)


def empirical_loss(net: ShallowReluNet, dataset: "Dataset", loss_kind: LossKind | str | Loss) -> float:
    """Mean per-example loss of `net` on the dataset."""
    return get_loss(loss_kind).mean(predict(net, dataset), dataset.y)


def accuracy(net: ShallowReluNet, dataset: "Dataset") -> float:
    """
    Fraction of examples classified correctly, reading a positive output as
    class 1 and anything else (zero included) as class 0.
    """
    y = dataset.y
    if not np.all((y == 0) | (y == 1)):
        raise LabelsNotBinary("accuracy needs labels in {0, 1}")
    return float(np.mean((predict(net, dataset) > 0) == (y == 1)))


@dataclass(frozen=True)
class NetGradients:
    W: np.ndarray
    v: np.ndarray
    c: float
    # the empirical loss the gradients were taken at
    loss: float


def loss_gradients(net: ShallowReluNet, dataset: "Dataset", loss_kind: LossKind | str | Loss) -> NetGradients:
    """
    Gradient of the empirical loss with respect to every parameter, using
    relu'(0) = 0.
    """
    loss = get_loss(loss_kind)
    net.check_dataset(dataset)
    xbar = dataset.xbar
    z = net.preactivations(xbar)
    active = z > 0
    hidden = np.where(active, z, 0.0)
    pred = net.v @ hidden + net.c
    g = loss.derivative(pred, dataset.y) / dataset.n
    return NetGradients(
        W=((net.v[:, None] * active) * g[None, :]) @ xbar.T,
        v=hidden @ g,
        c=float(g.sum()),
        loss=loss.mean(pred, dataset.y),
    )


def glorot_uniform(gen: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-bound, bound, size=(fan_out, fan_in))


def init_network(dataset: "Dataset", m: int, seed: int, v_fixed: np.ndarray | None = None) -> ShallowReluNet:
    """
    Glorot-uniform first layer with a zero bias column; `v` drawn the same
    way unless fixed; output bias 0.
    """
    gen = rng.stream(seed, "init")
    W = glorot_uniform(gen, m, dataset.p)
    if dataset.use_bias:
        W[:, -1] = 0.0
    v = glorot_uniform(gen, 1, m).reshape(-1) if v_fixed is None else np.asarray(v_fixed, dtype=float)
    return ShallowReluNet(W, v, 0.0, dataset.use_bias)


def gradient_descent(
    dataset: "Dataset",
    m: int,
    loss_kind: LossKind | str | Loss,
    lr: float,
    steps: int,
    seed: int,
    train_v: bool = True,
    v_fixed: np.ndarray | None = None,
    *,
    log_path: str | Path | None = None,
    on_log: Callable[[int, float], None] | None = None,
) -> ShallowReluNet:
    """
    Plain full-batch gradient descent on the empirical loss.

    With `train_v` every parameter trains. Without it `v` stays at
    `v_fixed` (default: `pm_half(m)`) and only `W` and `c` move.

    Every `settings.log_every` steps, and after the last one, the current
    loss is appended as a `{"step", "loss"}` JSON line to `log_path` and
    passed to `on_log`.
    """
    if m < 1 or steps < 0:
        raise InvalidParameter("m must be positive and steps nonnegative")
    loss = get_loss(loss_kind)
    if not train_v and v_fixed is None:
        v_fixed = pm_half(m)
    if v_fixed is not None and len(v_fixed) != m:
        raise InvalidParameter(f"v_fixed has {len(v_fixed)} entries for m={m}")

    net = init_network(dataset, m, seed, v_fixed if not train_v else None)

    log_file = open(log_path, "w") if log_path is not None else None
    try:
        for step in range(steps + 1):
            grads = loss_gradients(net, dataset, loss)
            value = grads.loss
            if not np.isfinite(value) or value > settings.divergence_loss:
                raise DivergenceDetected(f"loss {value:.3g} at step {step}")
            if step % settings.log_every == 0 or step == steps:
                logger.debug("gd step %d loss %.6g", step, value)
                if log_file is not None:
                    log_file.write(json.dumps({"step": step, "loss": value}) + "\n")
                if on_log is not None:
                    on_log(step, value)
            if step == steps:
                break
            try:
                net = ShallowReluNet(
                    net.W - lr * grads.W,
                    net.v - lr * grads.v if train_v else net.v,
                    net.c - lr * grads.c,
                    dataset.use_bias,
                )
            except InvalidParameter:
                raise DivergenceDetected(f"parameters overflowed at step {step + 1}") from None
    finally:
        if log_file is not None:
            log_file.close()

    return net
