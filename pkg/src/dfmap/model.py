"""Model containers and companion-form state-space assembly.

The observation equation loads ``r`` factors with up to ``p`` lags and the
factors follow a VAR(q). Both are folded into a single state space whose
state stacks the current factor with ``s = max(p, q - 1)`` of its lags, so
that the loading block and the VAR block are both sub-vectors of the state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelOrder",
    "Panel",
    "Theta",
    "StateSpace",
    "standardize",
    "build_state_space",
    "common_component",
]


@dataclass(frozen=True)
class ModelOrder:
    """Dimensions of the factor model.

    ``n`` observed variables, ``r`` factors, ``p`` loading lags (0 = static
    loadings) and ``q`` the VAR order of the factor process.
    """

    n: int
    r: int
    p: int
    q: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"need at least one variable, got n={self.n}")
        if self.r < 1:
            raise ValueError(f"need at least one factor, got r={self.r}")
        if self.p < 0:
            raise ValueError(f"loading lag count must be >= 0, got p={self.p}")
        if self.q < 1:
            raise ValueError(f"VAR order must be >= 1, got q={self.q}")

    @property
    def s(self) -> int:
        """Number of factor lags carried in the state vector."""
        return max(self.p, self.q - 1)

    @property
    def state_dim(self) -> int:
        return self.r * (self.s + 1)

    @property
    def loading_dim(self) -> int:
        """Width of the stacked loading block [f_t', ..., f_{t-p}']'."""
        return self.r * (self.p + 1)

    @property
    def var_dim(self) -> int:
        """Width of the stacked VAR regressor [f_{t-1}', ..., f_{t-q}']'."""
        return self.r * self.q


@dataclass(frozen=True)
class Panel:
    """An ``n x T`` data panel with an availability mask.

    ``values`` holds zeros in unavailable cells so that masked sums never
    pick up stale data; ``scale`` and ``center`` record the per-variable
    moments removed by :func:`standardize` (ones/zeros for raw panels).
    """

    values: np.ndarray
    mask: np.ndarray
    scale: np.ndarray
    center: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        if values.ndim != 2:
            raise ValueError("panel values must be a 2-D array")
        if mask.shape != values.shape:
            raise ValueError(
                f"mask shape {mask.shape} does not match values shape {values.shape}"
            )
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("available cells must be finite")
        values = np.where(mask, values, 0.0)
        mask = mask.copy()
        scale = np.array(self.scale, dtype=float)
        center = np.array(self.center, dtype=float)
        n = values.shape[0]
        if scale.shape != (n,) or center.shape != (n,):
            raise ValueError("scale and center must be length-n vectors")
        if np.any(scale <= 0) or not np.all(np.isfinite(scale)):
            raise ValueError("scale entries must be positive and finite")
        for name, arr in (("values", values), ("mask", mask),
                          ("scale", scale), ("center", center)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def of(cls, values: np.ndarray, mask: np.ndarray | None = None) -> "Panel":
        """Wrap raw values (NaN allowed in masked cells) with unit scaling."""
        values = np.asarray(values, dtype=float)
        if mask is None:
            mask = np.isfinite(values)
        n = values.shape[0]
        return cls(values, mask, np.ones(n), np.zeros(n))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def counts(self) -> np.ndarray:
        """Number of available observations per variable."""
        return self.mask.sum(axis=1)

    def to_original(self, standardized: np.ndarray) -> np.ndarray:
        """Map a standardized ``n x T`` matrix back to original units."""
        return self.center[:, None] + self.scale[:, None] * np.asarray(standardized)


@dataclass(frozen=True)
class Theta:
    """Parameter set: stacked loadings, stacked VAR coefficients, precisions.

    ``Lambda`` is ``n x r(p+1)`` with blocks ``[L_0 ... L_p]``; ``Phi`` is
    ``r x rq`` with blocks ``[P_1 ... P_q]``. ``psi`` and ``omega`` hold the
    diagonal observation and factor-innovation precisions.
    """

    Lambda: np.ndarray
    Phi: np.ndarray
    psi: np.ndarray
    omega: np.ndarray

    def __post_init__(self) -> None:
        for name in ("Lambda", "Phi", "psi", "omega"):
            arr = np.array(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.Lambda.ndim != 2 or self.Phi.ndim != 2:
            raise ValueError("Lambda and Phi must be matrices")
        if np.any(self.psi <= 0) or np.any(self.omega <= 0):
            raise ValueError("precisions must be strictly positive")

    def check_order(self, order: ModelOrder) -> None:
        expected = {
            "Lambda": (order.n, order.loading_dim),
            "Phi": (order.r, order.var_dim),
            "psi": (order.n,),
            "omega": (order.r,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")

    def loading_block(self, lag: int, order: ModelOrder) -> np.ndarray:
        """The ``n x r`` loading matrix attached to factor lag ``lag``."""
        r = order.r
        return self.Lambda[:, lag * r:(lag + 1) * r]


@dataclass(frozen=True)
class StateSpace:
    """Companion-form system matrices.

    ``Z`` maps the state to observations (loadings padded with zeros),
    ``Tmat`` is the companion transition matrix, ``R`` selects which state
    entries receive innovations, ``Q``/``H`` are the innovation/observation
    covariances (inverses of the precision diagonals) and ``P0`` the
    diffuse-but-proper initial state covariance.
    """

    Z: np.ndarray
    Tmat: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    P0: np.ndarray

    @property
    def state_dim(self) -> int:
        return self.Tmat.shape[0]

    @property
    def h_diag(self) -> np.ndarray:
        return np.diag(self.H)

    @property
    def innovation_cov_full(self) -> np.ndarray:
        """R Q R' expanded to state dimension."""
        return self.R @ self.Q @ self.R.T


def standardize(raw: np.ndarray, mask: np.ndarray | None = None,
                demean: bool = True) -> Panel:
    """Scale each variable to unit sample standard deviation.

    ``raw`` is ``n x T`` with NaN marking missing cells (or an explicit
    ``mask``). With ``demean`` the per-variable available-sample mean is
    removed as well; either way the removed moments are recorded so results
    can be mapped back to original units.

    Raises ``ValueError`` naming the first variable with fewer than two
    available observations or zero sample variance.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ValueError("raw panel must be a 2-D array")
    if mask is None:
        mask = np.isfinite(raw)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != raw.shape:
            raise ValueError("mask shape does not match panel shape")
        if not np.all(np.isfinite(raw[mask])):
            raise ValueError("available cells must be finite")

    n, _ = raw.shape
    center = np.zeros(n)
    scale = np.ones(n)
    values = np.where(mask, raw, 0.0)
    for i in range(n):
        avail = values[i, mask[i]]
        if avail.size < 2:
            raise ValueError(
                f"variable {i} has {avail.size} available observations; need >= 2"
            )
        mean_i = avail.mean()
        var_i = avail.var(ddof=1)
        if var_i <= 0.0:
            raise ValueError(f"variable {i} has zero sample variance")
        center[i] = mean_i if demean else 0.0
        scale[i] = np.sqrt(var_i)
    standardized = np.where(mask, (values - center[:, None]) / scale[:, None], 0.0)
    return Panel(standardized, mask, scale, center)


def build_state_space(theta: Theta, order: ModelOrder, sigma0: float) -> StateSpace:
    """Assemble the companion-form system matrices for ``theta``.

    ``Z = [Lambda | 0]`` pads the loadings to the state width; the top ``r``
    rows of the transition matrix hold ``[Phi | 0]`` with an identity shifted
    into the lower-left block; ``P0 = sigma0 * I``.
    """
    theta.check_order(order)
    if not np.isfinite(sigma0) or sigma0 < 0:
        raise ValueError(f"sigma0 must be a nonnegative finite scalar, got {sigma0}")
    n, r, s = order.n, order.r, order.s
    m = order.state_dim

    Z = np.zeros((n, m))
    Z[:, :order.loading_dim] = theta.Lambda

    Tmat = np.zeros((m, m))
    Tmat[:r, :order.var_dim] = theta.Phi
    if s > 0:
        Tmat[r:, :r * s] = np.eye(r * s)

    R = np.zeros((m, r))
    R[:r, :r] = np.eye(r)
    Q = np.diag(1.0 / theta.omega)
    H = np.diag(1.0 / theta.psi)
    P0 = sigma0 * np.eye(m)
    return StateSpace(Z=Z, Tmat=Tmat, R=R, Q=Q, H=H, P0=P0)


def common_component(theta: Theta, factor_path: np.ndarray, order: ModelOrder,
                     n_presample: int | None = None,
                     scale: np.ndarray | None = None,
                     center: np.ndarray | None = None) -> np.ndarray:
    """Evaluate the factor-driven part of every series.

    ``factor_path`` is ``r x (T + n_presample)`` whose trailing ``T`` columns
    are the in-sample factors; ``n_presample`` defaults to ``order.s``. At
    least ``p`` pre-sample columns are required to evaluate the loading lag
    polynomial at ``t = 1``. When ``scale``/``center`` are given, the output
    is mapped back to original units.
    """
    theta.check_order(order)
    factor_path = np.asarray(factor_path, dtype=float)
    if factor_path.ndim != 2 or factor_path.shape[0] != order.r:
        raise ValueError(
            f"factor path must be r x (T + presample) with r={order.r}"
        )
    lead = order.s if n_presample is None else int(n_presample)
    if lead < order.p:
        raise ValueError(
            f"need at least p={order.p} pre-sample factor columns, got {lead}"
        )
    T = factor_path.shape[1] - lead
    if T < 1:
        raise ValueError("factor path holds no in-sample columns")

    out = np.zeros((order.n, T))
    for lag in range(order.p + 1):
        block = theta.loading_block(lag, order)
        out += block @ factor_path[:, lead - lag:lead - lag + T]
    if scale is not None:
        out = out * np.asarray(scale, dtype=float)[:, None]
    if center is not None:
        out = out + np.asarray(center, dtype=float)[:, None]
    return out
