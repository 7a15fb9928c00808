"""
The public interface of the library.

Everything a script or a notebook needs is importable from here:

    from reluzono import gen_synthetic, gls, pm_half

    ds = gen_synthetic(d=4, m_gen=2, seed=0)
    result = gls(ds, m=8, v=pm_half(8), loss_kind="mse", max_steps=100, seed=0)

The modules underneath, roughly bottom-up:

* data, ingest        - datasets and where they come from
* network, losses     - the model and its losses
* lp, qp              - the convex solvers
* arrangement         - activation patterns and their feasibility
* convex              - the convex problem of one activation region
* search, chunked     - the trainers
* experiments, main   - the harness and the command line
"""
from .arrangement import ActivationPattern, ChamberSet, FeasibilityOracle, enumerate_chambers, neighbors
from .chunked import chunked_fit
from .config import settings
from .convex import RegionProblem, RegionSolution, alternate_optimize, solve_region
from .data import (
    Dataset,
    PerturbationSpec,
    SetCoverInstance,
    SetCoverVariant,
    check_general_position,
    gen_collinear_dataset,
    gen_flat_dataset,
    gen_set_cover_dataset,
    gen_synthetic,
    perturb,
    read_dataset,
    write_dataset,
)
from .errors import ReluZonoError
from .ingest import build_binary_task, read_idx
from .losses import LossKind
from .network import ShallowReluNet, accuracy, empirical_loss, gradient_descent, pm_half
from .search import SearchResult, exact_erm, gls, mgls, random_vertex_fit

__all__ = [
    "ActivationPattern",
    "ChamberSet",
    "FeasibilityOracle",
    "enumerate_chambers",
    "neighbors",
    "chunked_fit",
    "settings",
    "RegionProblem",
    "RegionSolution",
    "alternate_optimize",
    "solve_region",
    "Dataset",
    "PerturbationSpec",
    "SetCoverInstance",
    "SetCoverVariant",
    "check_general_position",
    "gen_collinear_dataset",
    "gen_flat_dataset",
    "gen_set_cover_dataset",
    "gen_synthetic",
    "perturb",
    "read_dataset",
    "write_dataset",
    "ReluZonoError",
    "build_binary_task",
    "read_idx",
    "LossKind",
    "ShallowReluNet",
    "accuracy",
    "empirical_loss",
    "gradient_descent",
    "pm_half",
    "SearchResult",
    "exact_erm",
    "gls",
    "mgls",
    "random_vertex_fit",
]
