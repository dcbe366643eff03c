"""Kalman filtering and smoothing with missing-data row deletion.

Two interchangeable kernel implementations back the public operations: a
compiled Cython core (``dfmap.kalman._ckalman``) and a pure-NumPy fallback.
The compiled core is preferred when importable; set ``DFMAP_BACKEND=numpy``
or ``DFMAP_BACKEND=compiled`` to force a choice, or pass ``backend=`` per
call. ``benchmarks/bench_kalman.py`` compares the two.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..model import Panel, StateSpace
from . import _npkalman

__all__ = [
    "ACTIVE_BACKEND",
    "FilterOutput",
    "SmoothedMoments",
    "available_backends",
    "run_filter",
    "run_smoother",
]

_requested = os.environ.get("DFMAP_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "compiled", "numpy"):
    raise RuntimeError(
        f"DFMAP_BACKEND must be 'auto', 'compiled' or 'numpy', got {_requested!r}"
    )

_ckalman = None
if _requested in ("auto", "compiled"):
    try:
        import importlib

        _ckalman = importlib.import_module("dfmap.kalman._ckalman")
    except ImportError:
        if _requested == "compiled":
            raise
        _ckalman = None

ACTIVE_BACKEND = "compiled" if _ckalman is not None else "numpy"


def available_backends() -> tuple[str, ...]:
    return ("compiled", "numpy") if _ckalman is not None else ("numpy",)


def _kernels(backend: str | None):
    if backend is None:
        backend = ACTIVE_BACKEND
    if backend == "numpy":
        return _npkalman
    if backend == "compiled":
        if _ckalman is None:
            raise RuntimeError("compiled kalman backend is not built")
        return _ckalman
    raise ValueError(f"unknown backend {backend!r}")


@dataclass(frozen=True)
class FilterOutput:
    """Filter moments indexed ``0..T`` (slot 0 = initial state) and loglik.

    ``predicted_*[t]`` are the one-step-ahead moments given data through
    ``t - 1``; ``filtered_*[t]`` condition on data through ``t``. ``loglik``
    is the marginal log-likelihood of the available observations.
    """

    predicted_mean: np.ndarray
    predicted_cov: np.ndarray
    filtered_mean: np.ndarray
    filtered_cov: np.ndarray
    loglik: float

    @property
    def T(self) -> int:
        return self.predicted_mean.shape[0] - 1


@dataclass(frozen=True)
class SmoothedMoments:
    """Full-sample state moments.

    ``mean[t]``/``cov[t]`` for ``t = 0..T`` condition on all available data;
    ``lag1cov[t]`` holds the cross-covariance between the states at ``t`` and
    ``t - 1`` for ``t = 1..T`` (slot 0 is zero by convention).
    """

    mean: np.ndarray
    cov: np.ndarray
    lag1cov: np.ndarray

    @property
    def T(self) -> int:
        return self.mean.shape[0] - 1

    def second_moment(self, t: int) -> np.ndarray:
        """E[state_t state_t'] = cov[t] + mean[t] mean[t]'."""
        return self.cov[t] + np.outer(self.mean[t], self.mean[t])


def run_filter(ss: StateSpace, panel: Panel, backend: str | None = None) -> FilterOutput:
    """Filter the panel, updating only with the available rows at each step.

    A time step with no available observations performs prediction only and
    contributes nothing to the log-likelihood.
    """
    if ss.Z.shape[0] != panel.n:
        raise ValueError(
            f"state space has {ss.Z.shape[0]} observation rows, panel has {panel.n}"
        )
    kern = _kernels(backend)
    pm, pc, fm, fc, loglik = kern.filter_missing(
        ss.Z, ss.Tmat, ss.innovation_cov_full, ss.h_diag, ss.P0,
        panel.values, np.ascontiguousarray(panel.mask, dtype=np.uint8),
    )
    return FilterOutput(pm, pc, fm, fc, float(loglik))


def run_smoother(ss: StateSpace, fo: FilterOutput, backend: str | None = None) -> SmoothedMoments:
    """Fixed-interval smoother over a filter pass from the same state space."""
    if fo.predicted_mean.shape[1] != ss.state_dim:
        raise ValueError("filter output does not match the state dimension")
    kern = _kernels(backend)
    sm, sc, lag1 = kern.smooth(
        ss.Tmat, fo.predicted_mean, fo.predicted_cov,
        fo.filtered_mean, fo.filtered_cov,
    )
    return SmoothedMoments(sm, sc, lag1)
