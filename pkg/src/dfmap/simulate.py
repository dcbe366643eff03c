"""Synthetic panel generator and missing-pattern randomization.

Factors follow independent AR(1) processes with unit innovation variance and
persistence drawn uniformly; loadings are standard normal; the idiosyncratic
covariance is scaled so that each variable's noise share of total variance
equals a uniformly drawn target, with optional geometric cross-correlation
that violates the exact-factor assumption on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Panel

__all__ = ["DgpConfig", "SimulatedData", "simulate_dgp", "apply_missing"]

# distinct sub-streams so a shared integer seed still yields independent
# draws for the data and for the mask
_DGP_STREAM = 1
_MASK_STREAM = 2


@dataclass(frozen=True)
class DgpConfig:
    """Dimensions and distributional knobs of the data-generating process."""

    n: int
    T: int
    r: int
    p: int
    delta: float = 0.0
    alpha_range: tuple[float, float] = (-0.95, 0.95)
    beta_range: tuple[float, float] = (0.1, 0.9)
    seed: int = 0
    burn_in: int = 200

    def __post_init__(self) -> None:
        if self.n < 1 or self.T < 1 or self.r < 1 or self.p < 0:
            raise ValueError("dimensions must satisfy n,T,r >= 1 and p >= 0")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must be in [0, 1), got {self.delta}")
        lo, hi = self.alpha_range
        if not (-1.0 < lo <= hi < 1.0):
            raise ValueError(f"alpha_range must lie within (-1, 1), got {self.alpha_range}")
        lo, hi = self.beta_range
        if not (0.0 < lo <= hi < 1.0):
            raise ValueError(f"beta_range must lie within (0, 1), got {self.beta_range}")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")


@dataclass(frozen=True)
class SimulatedData:
    """A complete simulated panel with its generating quantities."""

    panel: np.ndarray    # n x T observations (common + noise)
    common: np.ndarray   # n x T true common component
    factors: np.ndarray  # r x (T + p), columns are times 1-p .. T
    lambdas: np.ndarray  # n x r(p+1) stacked loadings
    alphas: np.ndarray   # per-factor AR(1) persistence
    Sigma: np.ndarray    # n x n idiosyncratic covariance
    betas: np.ndarray    # per-variable noise share targets
    gammas: np.ndarray   # per-variable idiosyncratic variances


def simulate_dgp(cfg: DgpConfig) -> SimulatedData:
    """Draw one complete data set.

    Factors are burned in from a zero initial state; the idiosyncratic
    variance of variable ``i`` is set so its share of total variance equals
    ``beta_i`` (exact when ``p = 0``), and cross-correlation decays as
    ``delta ** |i - m|``.
    """
    rng = np.random.default_rng([cfg.seed, _DGP_STREAM])
    n, T, r, p = cfg.n, cfg.T, cfg.r, cfg.p

    alphas = rng.uniform(cfg.alpha_range[0], cfg.alpha_range[1], size=r)
    betas = rng.uniform(cfg.beta_range[0], cfg.beta_range[1], size=n)
    lambdas = rng.standard_normal((n, r * (p + 1)))

    # per-variable idiosyncratic variance implied by the noise-share target
    factor_var = 1.0 / (1.0 - alphas ** 2)
    load_sq = lambdas.reshape(n, p + 1, r) ** 2
    signal_var = np.einsum("ilr,r->i", load_sq, factor_var)
    gammas = betas / (1.0 - betas) * signal_var

    offsets = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    Sigma = (cfg.delta ** offsets) * np.sqrt(np.outer(gammas, gammas))

    total = cfg.burn_in + p + T
    innov = rng.standard_normal((r, total))
    path = np.zeros((r, total))
    prev = np.zeros(r)
    for t in range(total):
        prev = alphas * prev + innov[:, t]
        path[:, t] = prev
    factors = path[:, cfg.burn_in:]  # times 1-p .. T

    eps = np.linalg.cholesky(Sigma) @ rng.standard_normal((n, T))

    common = np.zeros((n, T))
    for lag in range(p + 1):
        block = lambdas[:, lag * r:(lag + 1) * r]
        common += block @ factors[:, p - lag:p - lag + T]
    return SimulatedData(
        panel=common + eps,
        common=common,
        factors=factors,
        lambdas=lambdas,
        alphas=alphas,
        Sigma=Sigma,
        betas=betas,
        gammas=gammas,
    )


def apply_missing(data: SimulatedData, fraction: float, pattern: str = "uniform",
                  seed: int = 0, max_delay: int = 0,
                  max_retries: int = 100) -> Panel:
    """Mask cells of a simulated panel, keeping every variable estimable.

    ``uniform`` masks each cell independently with probability ``fraction``,
    redrawing any variable left with fewer than two observations (bounded
    retries). ``ragged_edge`` masks a per-variable trailing stretch with a
    delay drawn uniformly from ``0..max_delay``.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    rng = np.random.default_rng([seed, _MASK_STREAM])
    values = data.panel
    n, T = values.shape

    if pattern == "uniform":
        if fraction == 0.0:
            mask = np.ones((n, T), dtype=bool)
        else:
            mask = rng.random((n, T)) >= fraction
            for i in range(n):
                retries = 0
                while mask[i].sum() < 2:
                    if retries >= max_retries:
                        raise ValueError(
                            f"could not keep 2 observations for variable {i} "
                            f"at missing fraction {fraction}"
                        )
                    mask[i] = rng.random(T) >= fraction
                    retries += 1
    elif pattern == "ragged_edge":
        if max_delay < 0 or max_delay > T - 2:
            raise ValueError(
                f"max_delay must be in [0, T-2] = [0, {T - 2}], got {max_delay}"
            )
        delays = rng.integers(0, max_delay + 1, size=n)
        mask = np.ones((n, T), dtype=bool)
        for i in range(n):
            if delays[i] > 0:
                mask[i, T - delays[i]:] = False
    else:
        raise ValueError(f"unknown missing pattern {pattern!r}")
    return Panel.of(np.where(mask, values, np.nan), mask)
