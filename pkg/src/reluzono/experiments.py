"""
Experiment harness shared by the command line and the trend tests.

* `run_method`          - one optimizer on one dataset, uniform result.
* `stability_trials`    - do small perturbations keep the chamber set (and loss)?
* `hardness_table`      - minimal loss of a set-cover dataset vs. minimal cover size.
* `run_bench`           - a (method x m) grid over seeds, reduced to median/std rows.
"""
import csv
import logging
import multiprocessing
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence, TextIO

import numpy as np
from tqdm import tqdm

from .arrangement import enumerate_chambers
from .chunked import chunked_fit
from .config import settings
from .data import (
    Dataset,
    PerturbationSpec,
    SetCoverInstance,
    SetCoverVariant,
    find_cover,
    gen_set_cover_dataset,
    gen_synthetic,
    perturb,
    stability_radius,
)
from .errors import InvalidParameter, LabelsNotBinary
from .losses import LossKind
from .network import ShallowReluNet, accuracy, empirical_loss, gradient_descent, pm_half
from .search import SearchTrace, exact_erm, gls, mgls, random_vertex_fit

logger = logging.getLogger(__name__)


class Method(str, Enum):
    EXACT = "exact"
    GLS = "gls"
    MGLS = "mgls"
    RANDOM_VERTEX = "random-vertex"
    CHUNKED = "chunked"
    GD = "gd"


@dataclass(frozen=True)
class MethodParams:
    max_steps: int = 1000
    lr: float = 1e-3
    steps: int = 400_000
    fit_output_bias: bool = False
    train_v: bool = True
    max_rounds: int = 50
    log_path: str | None = None


@dataclass(frozen=True, eq=False)
class MethodOutcome:
    net: ShallowReluNet
    loss: float
    qp_solves: int
    trace: SearchTrace | None = None
    pattern_json: dict[str, Any] | None = None

    def accuracy(self, dataset: Dataset) -> float | None:
        try:
            return accuracy(self.net, dataset)
        except LabelsNotBinary:
            return None


def run_method(
    method: Method | str,
    dataset: Dataset,
    m: int,
    loss_kind: LossKind | str,
    v: np.ndarray | None,
    seed: int,
    params: MethodParams = MethodParams(),
) -> MethodOutcome:
    """
    Run one optimizer. `v=None` means the +-1 halves vector. `m` is ignored
    by `chunked`, whose unit count is fixed by the data.
    """
    method = Method(method)
    kind = LossKind(loss_kind)
    if method is not Method.CHUNKED and v is None:
        v = pm_half(m)

    if method is Method.CHUNKED:
        net, _ = chunked_fit(dataset)
        return MethodOutcome(net, empirical_loss(net, dataset, kind), 0)
    if method is Method.GD:
        net = gradient_descent(
            dataset, m, kind, params.lr, params.steps, seed, params.train_v,
            None if params.train_v else v, log_path=params.log_path,
        )
        return MethodOutcome(net, empirical_loss(net, dataset, kind), 0)

    assert v is not None
    if method is Method.EXACT:
        result = exact_erm(dataset, m, v, kind, params.fit_output_bias)
    elif method is Method.GLS:
        result = gls(dataset, m, v, kind, params.max_steps, seed, params.fit_output_bias)
    elif method is Method.MGLS:
        result = mgls(dataset, m, v, kind, params.max_steps, seed, fit_output_bias=params.fit_output_bias)
    else:
        result = random_vertex_fit(dataset, m, v, kind, seed, params.max_rounds)
    return MethodOutcome(result.net, result.loss, result.trace.qp_solves, result.trace, result.pattern.to_json())


# stability #########################


@dataclass
class StabilityReport:
    epsilon: float
    trials: int
    identical: int = 0
    chambers: int = 0
    # min loss of the original data, and per trial for perturbed data, when compared
    base_loss: float | None = None
    perturbed_losses: list[float] = field(default_factory=list)

    @property
    def fraction_identical(self) -> float:
        return self.identical / self.trials if self.trials else 1.0

    @property
    def max_loss_change(self) -> float | None:
        if self.base_loss is None or not self.perturbed_losses:
            return None
        return max(abs(loss - self.base_loss) for loss in self.perturbed_losses)

    def to_json(self) -> dict[str, Any]:
        doc = asdict(self)
        doc["fraction_identical"] = self.fraction_identical
        doc["max_loss_change"] = self.max_loss_change
        return doc


def stability_trials(
    dataset: Dataset,
    epsilon: float | None,
    trials: int,
    seed: int = 0,
    compare_loss: LossKind | str | None = None,
) -> StabilityReport:
    """
    Perturb the dataset `trials` times (seeds seed, seed+1, ...) and count
    how often the chamber set is unchanged.

    `epsilon=None` uses `stability_radius`, which is zero for degenerate
    data. With `compare_loss`, also solve the single-unit problem (v = 1)
    exactly on the original and every perturbed dataset.
    """
    if trials < 1:
        raise InvalidParameter("trials must be positive")
    if epsilon is None:
        epsilon = stability_radius(dataset)
        if epsilon == 0:
            raise InvalidParameter("the data is not in general position; pass an explicit epsilon")
    base = enumerate_chambers(dataset).pattern_set()
    report = StabilityReport(epsilon=epsilon, trials=trials, chambers=len(base))
    if compare_loss is not None:
        report.base_loss = exact_erm(dataset, 1, [1.0], compare_loss).loss
    for t in range(trials):
        moved = perturb(dataset, PerturbationSpec(epsilon, seed + t))
        if enumerate_chambers(moved).pattern_set() == base:
            report.identical += 1
        if compare_loss is not None:
            report.perturbed_losses.append(exact_erm(moved, 1, [1.0], compare_loss).loss)
    return report


# hardness ##########################


@dataclass(frozen=True)
class HardnessRow:
    t: int
    threshold: float
    min_loss: float
    loss_within: bool
    cover_exists: bool

    @property
    def agrees(self) -> bool:
        return self.loss_within == self.cover_exists


def hardness_table(
    instance: SetCoverInstance,
    variant: SetCoverVariant | str = SetCoverVariant.DEGENERATE,
    seed: int = 0,
    rel_tol: float = 1e-6,
) -> list[HardnessRow]:
    """
    For every t in 1..M compare "minimal MSE <= t gamma^2 / N" with "a cover
    of size <= t exists". The minimal MSE is computed once by `exact_erm`
    with a single unit and v = 1.

    The comparison is exact up to a relative `rel_tol` for rounding in the
    region solves.
    """
    dataset = gen_set_cover_dataset(instance, variant, seed=seed)
    min_loss = exact_erm(dataset, 1, [1.0], LossKind.MSE).loss
    rows = []
    for t in range(1, instance.m + 1):
        threshold = t * instance.gamma**2 / dataset.n
        rows.append(
            HardnessRow(
                t=t,
                threshold=threshold,
                min_loss=min_loss,
                loss_within=min_loss <= threshold * (1.0 + rel_tol),
                cover_exists=find_cover(instance, t) is not None,
            )
        )
    return rows


# bench #############################


BENCH_COLUMNS = ["method", "d", "m_gen_or_N", "m", "median_loss", "std_loss", "median_acc", "std_acc"]


@dataclass(frozen=True)
class BenchRow:
    method: str
    d: int
    m_gen_or_N: int
    m: int
    median_loss: float
    std_loss: float
    median_acc: float | None
    std_acc: float | None


def summarize(
    method: str, d: int, m_gen_or_n: int, m: int, losses: Sequence[float], accs: Sequence[float | None]
) -> BenchRow:
    known = [a for a in accs if a is not None]
    return BenchRow(
        method=method,
        d=d,
        m_gen_or_N=m_gen_or_n,
        m=m,
        median_loss=float(np.median(losses)),
        std_loss=float(np.std(losses)),
        median_acc=float(np.median(known)) if known else None,
        std_acc=float(np.std(known)) if known else None,
    )


@dataclass(frozen=True, eq=False)
class _BenchCell:
    method: Method
    m: int
    seeds: tuple[int, ...]
    loss_kind: LossKind
    dataset: Dataset | None
    d: int | None
    m_gen: int | None
    params: MethodParams
    # the parent's settings, replayed in worker processes
    overrides: dict[str, Any] = field(default_factory=dict)


def _run_cell(cell: _BenchCell) -> BenchRow:
    if cell.overrides:
        settings.update(**{**cell.overrides, "workers": 1})
    losses: list[float] = []
    accs: list[float | None] = []
    for seed in cell.seeds:
        ds = cell.dataset
        if ds is None:
            ds = gen_synthetic(cell.d, cell.m_gen, seed)  # type: ignore[arg-type]
        outcome = run_method(cell.method, ds, cell.m, cell.loss_kind, None, seed, cell.params)
        losses.append(outcome.loss)
        accs.append(outcome.accuracy(ds))
    return summarize(
        cell.method.value,
        cell.dataset.d if cell.dataset is not None else int(cell.d),  # type: ignore[arg-type]
        cell.dataset.n if cell.dataset is not None else int(cell.m_gen),  # type: ignore[arg-type]
        cell.m,
        losses,
        accs,
    )


def run_bench(
    methods: Iterable[Method | str],
    ms: Iterable[int],
    seeds: Sequence[int],
    loss_kind: LossKind | str,
    *,
    dataset: Dataset | None = None,
    d: int | None = None,
    m_gen: int | None = None,
    params: MethodParams = MethodParams(),
    progress: bool = False,
    on_row: Callable[[BenchRow], None] | None = None,
) -> list[BenchRow]:
    """
    Run every (method, m) cell over `seeds`.

    With a fixed `dataset` (classification tasks) every seed reuses it and
    the third column is N; otherwise a synthetic dataset is drawn per seed
    from (d, m_gen) and the third column is m_gen.

    Cells run in a process pool of `settings.workers` processes when that is
    more than one. Rows come back, and reach `on_row`, in grid order either
    way.
    """
    if dataset is None and (d is None or m_gen is None):
        raise InvalidParameter("run_bench needs either a dataset or both d and m_gen")
    parallel = settings.workers > 1
    snapshot = settings.as_dict() if parallel else {}
    cells = [
        _BenchCell(Method(method), m, tuple(seeds), LossKind(loss_kind), dataset, d, m_gen, params, snapshot)
        for method in methods
        for m in ms
    ]
    rows = []
    bar = tqdm(total=len(cells) * len(seeds), disable=not progress, desc="bench")

    def collect(results: Iterable[BenchRow]) -> None:
        for row in results:
            logger.info("bench %s m=%d: median loss %.3g", row.method, row.m, row.median_loss)
            rows.append(row)
            bar.update(len(seeds))
            if on_row is not None:
                on_row(row)

    if parallel and len(cells) > 1:
        with multiprocessing.Pool(processes=min(settings.workers, len(cells))) as pool:
            collect(pool.imap(_run_cell, cells))
    else:
        collect(map(_run_cell, cells))
    bar.close()
    return rows


def write_bench_csv(rows: Iterable[BenchRow], out: TextIO | str | Path) -> None:
    def dump(f: TextIO) -> None:
        writer = csv.DictWriter(f, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in asdict(row).items()})

    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as f:
            dump(f)
    else:
        dump(out)


def timed(fn: Callable[[], Any]) -> tuple[Any, int]:
    """Call `fn`, returning its result and the wall time in milliseconds."""
    start = time.perf_counter()
    result = fn()
    return result, int((time.perf_counter() - start) * 1000)
