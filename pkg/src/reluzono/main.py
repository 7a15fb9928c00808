"""
Command line entrypoint.

The commands are thin: parse flags, load a dataset, call into the library,
print JSON. Every command writes its main output to stdout (or `--out`), so
they compose with pipes:

    reluzono gen d1 --epsilon 0 | reluzono solve exact --m 1 --loss l1 --v 1

`cli_main` runs the typer app without letting click call `sys.exit`, and
maps the outcome to an exit code: 0 on success, 1 for library errors
(reported as {"error": kind, "detail": text} on stderr), 2 for usage
errors.
"""
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import click
import numpy as np
import typer

from .arrangement import chamber_count_bound, enumerate_chambers
from .config import settings
from .data import (
    Dataset,
    SetCoverInstance,
    SetCoverVariant,
    check_general_position,
    gen_collinear_dataset,
    gen_flat_dataset,
    gen_set_cover_dataset,
    gen_synthetic,
    read_set_cover,
)
from .errors import InvalidParameter, ReluZonoError
from .experiments import Method, MethodParams, hardness_table, run_bench, run_method, stability_trials, timed, write_bench_csv
from .ingest import build_binary_task, read_idx
from .losses import LossKind
from .network import empirical_loss, pm_half

logger = logging.getLogger(__name__)

RESULT_SCHEMA = "relu-zono-result/1"

app = typer.Typer(add_completion=False, no_args_is_help=True, help="Shallow ReLU training as zonotope vertex search.")
gen_app = typer.Typer(no_args_is_help=True, help="Generate datasets.")
ingest_app = typer.Typer(no_args_is_help=True, help="Build datasets from IDX archives.")
solve_app = typer.Typer(no_args_is_help=True, help="Train a network.")
analyze_app = typer.Typer(no_args_is_help=True, help="Inspect a dataset.")
bench_app = typer.Typer(no_args_is_help=True, help="Table-style experiment grids.")
app.add_typer(gen_app, name="gen")
app.add_typer(ingest_app, name="ingest")
app.add_typer(solve_app, name="solve")
app.add_typer(analyze_app, name="analyze")
app.add_typer(bench_app, name="bench")


@app.callback()
def configure(
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log progress to stderr."),
    workers: Optional[int] = typer.Option(None, help="Threads for neighbor and chamber evaluation; processes for bench cells."),
    chamber_cap: Optional[int] = typer.Option(None, help="Refuse chamber sets larger than this."),
    region_cap: Optional[int] = typer.Option(None, help="Refuse exact searches with more regions than this."),
) -> None:
    if verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    updates = {"workers": workers, "chamber_cap": chamber_cap, "region_solve_cap": region_cap}
    settings.update(**{k: v for k, v in updates.items() if v is not None})


# helpers ###########################


def emit(doc: Any, out: Optional[Path] = None) -> None:
    text = json.dumps(doc, sort_keys=True)
    if out is None:
        typer.echo(text)
    else:
        out.write_text(text + "\n")


def load_dataset(path: str) -> Dataset:
    """Read a dataset document from a file, or from stdin when `path` is "-"."""
    raw = sys.stdin.read() if path == "-" else Path(path).read_text()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise InvalidParameter(f"dataset is not valid JSON: {e}") from None
    return Dataset.from_json(doc)


def parse_v(text: Optional[str], m: int) -> Optional[np.ndarray]:
    """`pm-half` (or nothing) for the +-1 halves vector, else comma separated numbers."""
    if text is None or text == "pm-half":
        return pm_half(m)
    try:
        v = np.array([float(part) for part in text.split(",")])
    except ValueError:
        raise InvalidParameter(f"--v must be 'pm-half' or a comma separated list, got {text!r}") from None
    if v.shape[0] != m:
        raise InvalidParameter(f"--v has {v.shape[0]} entries for --m {m}")
    return v


def parse_ints(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise InvalidParameter(f"expected comma separated integers, got {text!r}") from None


def load_instance(instance: Optional[Path], universe: Optional[int], subsets: Optional[str], t: int) -> SetCoverInstance:
    """A set-cover instance from a JSON file, or from --universe and --subsets "1,2;2;1,2"."""
    if instance is not None:
        return read_set_cover(instance)
    if universe is None or subsets is None:
        raise InvalidParameter("give --instance, or both --universe and --subsets")
    return SetCoverInstance(universe, tuple(frozenset(parse_ints(s)) for s in subsets.split(";")), t)


# gen ###############################


@gen_app.command("synth")
def gen_synth(
    d: int = typer.Option(..., help="Input dimension."),
    m_gen: int = typer.Option(..., help="Hidden units of the labelling network."),
    seed: int = typer.Option(0),
    out: Optional[Path] = typer.Option(None),
) -> None:
    """Gaussian examples labelled by a random labelling network."""
    emit(gen_synthetic(d, m_gen, seed).to_json(), out)


@gen_app.command("collinear")
@gen_app.command("d1", hidden=True)
def gen_collinear(
    epsilon: float = typer.Option(0.0, help="Lift of the middle example off the line."),
    out: Optional[Path] = typer.Option(None),
) -> None:
    """Five examples on a line: the L1 loss jumps under an arbitrarily small lift."""
    emit(gen_collinear_dataset(epsilon).to_json(), out)


@gen_app.command("flat")
@gen_app.command("d2", hidden=True)
def gen_flat(
    epsilon: float = typer.Option(0.0, help="Lift of the second example out of the plane."),
    out: Optional[Path] = typer.Option(None),
) -> None:
    """Four examples in a plane of R^3: a lift creates a new activation region."""
    emit(gen_flat_dataset(epsilon).to_json(), out)


@gen_app.command("setcover")
def gen_setcover(
    instance: Optional[Path] = typer.Option(None, help="Set-cover instance JSON."),
    universe: Optional[int] = typer.Option(None),
    subsets: Optional[str] = typer.Option(None, help='Subsets as "1,2;2;1,3".'),
    t: int = typer.Option(1),
    variant: SetCoverVariant = typer.Option(SetCoverVariant.DEGENERATE),
    delta1: Optional[float] = typer.Option(None),
    delta2: Optional[float] = typer.Option(None),
    epsilon: float = typer.Option(1e-3),
    seed: int = typer.Option(0),
    out: Optional[Path] = typer.Option(None),
) -> None:
    """Encode a set-cover instance as a single-ReLU training set."""
    inst = load_instance(instance, universe, subsets, t)
    emit(gen_set_cover_dataset(inst, variant, delta1, delta2, epsilon, seed).to_json(), out)


# ingest ############################


@ingest_app.command("idx")
def ingest_idx(
    images: Path = typer.Option(..., exists=True, dir_okay=False),
    labels: Path = typer.Option(..., exists=True, dir_okay=False),
    class_a: int = typer.Option(...),
    class_b: int = typer.Option(...),
    pca_dims: int = typer.Option(8),
    n: int = typer.Option(350),
    out: Optional[Path] = typer.Option(None),
) -> None:
    """Two classes of an IDX archive, PCA-whitened."""
    emit(build_binary_task(read_idx(images), read_idx(labels), class_a, class_b, pca_dims, n).to_json(), out)


# solve #############################


@dataclass
class RunResult:
    command: str
    seed: int
    loss: float
    accuracy: Optional[float]
    qp_solves: int
    wall_time_ms: int
    artifact_paths: list[str] = field(default_factory=list)
    net: dict[str, Any] = field(default_factory=dict)
    pattern: Optional[dict[str, Any]] = None

    def to_json(self) -> dict[str, Any]:
        return {
            "schema": RESULT_SCHEMA,
            "command": self.command,
            "seed": self.seed,
            "loss": self.loss,
            "accuracy": self.accuracy,
            "qp_solves": self.qp_solves,
            "wall_time_ms": self.wall_time_ms,
            "artifact_paths": self.artifact_paths,
            "net": self.net,
            "pattern": self.pattern,
        }


def solve(
    ctx: typer.Context,
    data: str = typer.Option("-", help="Dataset JSON path, '-' for stdin."),
    m: int = typer.Option(1, help="Hidden units (ignored by chunked)."),
    loss: LossKind = typer.Option(LossKind.MSE),
    v: Optional[str] = typer.Option(None, help="Output weights: 'pm-half' or a comma separated list."),
    seed: int = typer.Option(0),
    max_steps: int = typer.Option(1000, help="Local search step limit."),
    lr: float = typer.Option(1e-3, help="Gradient descent learning rate."),
    steps: int = typer.Option(400_000, help="Gradient descent steps."),
    fit_output_bias: bool = typer.Option(False, help="Fit the output bias inside each region."),
    train_v: bool = typer.Option(True, help="Gradient descent also trains v (otherwise v is fixed)."),
    out: Optional[Path] = typer.Option(None, help="Write the network checkpoint here."),
    trace: Optional[Path] = typer.Option(None, help="Write the search trace here as JSON lines."),
    log: Optional[Path] = typer.Option(None, help="Gradient descent loss curve, JSON lines."),
) -> None:
    """Run one optimizer and print a result document."""
    method = Method(ctx.info_name)
    dataset = load_dataset(data)
    v_arr = None if method is Method.CHUNKED else parse_v(v, m)
    params = MethodParams(
        max_steps=max_steps,
        lr=lr,
        steps=steps,
        fit_output_bias=fit_output_bias,
        train_v=train_v,
        log_path=str(log) if log else None,
    )
    outcome, wall = timed(lambda: run_method(method, dataset, m, loss, v_arr, seed, params))

    artifacts = []
    if out is not None:
        out.write_text(json.dumps(outcome.net.to_json()) + "\n")
        artifacts.append(str(out))
    if trace is not None and outcome.trace is not None:
        trace.write_text(outcome.trace.to_jsonl())
        artifacts.append(str(trace))
    if log is not None:
        artifacts.append(str(log))

    result = RunResult(
        command=f"solve {method.value}",
        seed=seed,
        loss=empirical_loss(outcome.net, dataset, loss),
        accuracy=outcome.accuracy(dataset),
        qp_solves=outcome.qp_solves,
        wall_time_ms=wall,
        artifact_paths=artifacts,
        net=outcome.net.to_json(),
        pattern=outcome.pattern_json,
    )
    emit(result.to_json())


for _method in Method:
    solve_app.command(_method.value)(solve)


# analyze ###########################


@analyze_app.command("chambers")
def analyze_chambers(
    data: str = typer.Option("-"),
    list_: bool = typer.Option(False, "--list", help="Include every chamber and its witness."),
) -> None:
    """Count the chambers of the single-unit arrangement."""
    dataset = load_dataset(data)
    chambers = enumerate_chambers(dataset)
    doc: dict[str, Any] = {
        "chambers": len(chambers),
        "general_position_count": chamber_count_bound(dataset.n, dataset.p),
    }
    if list_:
        doc["list"] = chambers.to_json()
    emit(doc)


@analyze_app.command("stability")
def analyze_stability(
    data: str = typer.Option("-"),
    epsilon: str = typer.Option("auto", help="Perturbation radius, or 'auto' for a certified radius."),
    trials: int = typer.Option(20),
    seed: int = typer.Option(0),
    compare_loss: Optional[LossKind] = typer.Option(None, help="Also compare the exact single-unit loss."),
) -> None:
    """Compare the chamber sets of a dataset and its perturbations."""
    dataset = load_dataset(data)
    if epsilon == "auto":
        eps = None
    else:
        try:
            eps = float(epsilon)
        except ValueError:
            raise InvalidParameter(f"--epsilon must be a number or 'auto', got {epsilon!r}") from None
    emit(stability_trials(dataset, eps, trials, seed, compare_loss).to_json())


@analyze_app.command("gp")
def analyze_gp(
    data: str = typer.Option("-"),
    tol: Optional[float] = typer.Option(None),
    sample: bool = typer.Option(False, help="Sample subsets instead of refusing large checks."),
    seed: int = typer.Option(0),
) -> None:
    """Check general position."""
    dataset = load_dataset(data)
    report = check_general_position(dataset, tol, exhaustive=not sample, seed=seed)
    doc = {
        "general_position": report.general,
        "probabilistic": report.probabilistic,
        "subsets_checked": report.checked,
        "min_singular": report.min_singular,
        "stability_radius": 0.5 * report.min_singular / np.sqrt(min(dataset.n, dataset.p)) if report.general else 0.0,
    }
    emit(doc)


@analyze_app.command("hardness")
def analyze_hardness(
    instance: Optional[Path] = typer.Option(None),
    universe: Optional[int] = typer.Option(None),
    subsets: Optional[str] = typer.Option(None),
    variant: SetCoverVariant = typer.Option(SetCoverVariant.DEGENERATE),
    seed: int = typer.Option(0),
) -> None:
    """Minimal single-unit loss of a set-cover dataset against cover sizes."""
    inst = load_instance(instance, universe, subsets, 1)
    rows = hardness_table(inst, variant, seed)
    emit(
        [
            {
                "t": r.t,
                "threshold": r.threshold,
                "min_loss": r.min_loss,
                "loss_within": r.loss_within,
                "cover_exists": r.cover_exists,
            }
            for r in rows
        ]
    )


# bench #############################


@bench_app.command("table")
def bench_table(
    methods: str = typer.Option("gls,random-vertex", help="Comma separated methods."),
    ms: str = typer.Option("8,16", help="Comma separated hidden unit counts."),
    seeds: int = typer.Option(16, help="Number of seeds, 0..seeds-1."),
    loss: LossKind = typer.Option(LossKind.MSE),
    d: Optional[int] = typer.Option(None, help="Synthetic input dimension."),
    m_gen: Optional[int] = typer.Option(None, help="Hidden units of the synthetic labelling network."),
    data: Optional[str] = typer.Option(None, help="Fixed dataset instead of synthetic data."),
    max_steps: int = typer.Option(1000),
    lr: float = typer.Option(1e-3),
    steps: int = typer.Option(400_000),
    fit_output_bias: bool = typer.Option(False),
    train_v: bool = typer.Option(True),
    out: Optional[Path] = typer.Option(None, help="CSV output (stdout by default)."),
    progress: bool = typer.Option(False, help="Show a progress bar on stderr."),
) -> None:
    """Median and standard deviation of loss and accuracy over seeds, per (method, m)."""
    params = MethodParams(max_steps=max_steps, lr=lr, steps=steps, fit_output_bias=fit_output_bias, train_v=train_v)
    rows = run_bench(
        [Method(name) for name in methods.split(",")],
        parse_ints(ms),
        list(range(seeds)),
        loss,
        dataset=load_dataset(data) if data is not None else None,
        d=d,
        m_gen=m_gen,
        params=params,
        progress=progress,
    )
    write_bench_csv(rows, out if out is not None else sys.stdout)


# entrypoints #######################


def cli_main(argv: Optional[list[str]] = None) -> int:
    """Run the CLI on `argv` and return the exit code instead of exiting."""
    args = sys.argv[1:] if argv is None else list(argv)
    try:
        result = app(args=args, prog_name="reluzono", standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 2
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        return 1
    except ReluZonoError as e:
        typer.echo(json.dumps({"error": e.kind, "detail": str(e)}), err=True)
        return 1
    return result if isinstance(result, int) else 0


def run() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    run()
