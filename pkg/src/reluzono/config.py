"""
Configuration for the whole library.

`Settings` keeps its defaults on the class, and a single module-level
instance, `settings`, is what everything else reads.

It would be possible to instantiate a second `Settings()`, but nothing in
the library would look at it. Solvers and searches always read the
`settings` singleton at call time, which means a change made through
`settings.override(...)` is seen everywhere for the duration of the block.

A consequence worth knowing: overrides are process-wide, not per-thread.
The CLI applies them once before any work starts and tests apply them
around a single call, so this has not been a problem in practice.
"""
import contextlib
from typing import Any, Iterator


class Settings:
    # feasibility of a region solution, after each constraint row is
    # divided by the norm of its example
    tol_feas: float = 1e-8
    # certified optimality for the QP/barrier engines
    tol_kkt: float = 1e-7
    # reduced-cost threshold for the simplex engine
    tol_reduced_cost: float = 1e-9

    # general position: smallest singular value of every p-subset must
    # exceed gp_tol times the largest singular value of the full matrix
    gp_tol: float = 1e-9
    subset_cap: int = 1_000_000

    # exponential work guards
    chamber_cap: int = 1_000_000
    region_solve_cap: int = 1_000_000
    set_cover_max_d: int = 64

    # iteration caps
    ipm_max_iter: int = 200
    active_set_max_iter: int = 5000
    simplex_max_iter: int = 50_000
    newton_max_iter: int = 100
    barrier_max_outer: int = 60
    # the logistic region problem has no minimizer when a region separates
    # the data, so its weights are boxed
    logistic_weight_bound: float = 1e4

    # search heuristics
    active_tol: float = 1e-6
    fit_tol: float = 1e-6

    # neighbor evaluation / chamber insertion thread pool size, and the
    # number of bench processes
    workers: int = 1

    # gradient descent
    log_every: int = 1000
    divergence_loss: float = 1e12

    def __repr__(self) -> str:
        values = ", ".join(f"{k}={v!r}" for k, v in self.as_dict().items())
        return f"Settings({values})"

    def as_dict(self) -> dict[str, Any]:
        """Current value of every setting."""
        names = [k for k in vars(Settings) if not k.startswith("_") and not callable(getattr(Settings, k))]
        return {k: getattr(self, k) for k in names}

    def _check(self, name: str) -> None:
        if name.startswith("_") or not hasattr(Settings, name) or callable(getattr(Settings, name)):
            raise AttributeError(f"unknown setting {name!r}")

    @contextlib.contextmanager
    def override(self, **values: Any) -> Iterator["Settings"]:
        """
        Temporarily change settings, restoring the previous values on exit:

            with settings.override(chamber_cap=10):
                enumerate_chambers(ds)
        """
        previous = {}
        for name, value in values.items():
            self._check(name)
            previous[name] = getattr(self, name)
            setattr(self, name, value)
        try:
            yield self
        finally:
            for name, value in previous.items():
                setattr(self, name, value)

    def update(self, **values: Any) -> None:
        """Permanent version of `override`, used by the CLI."""
        for name, value in values.items():
            self._check(name)
            setattr(self, name, value)


# our singleton instance
settings = Settings()
