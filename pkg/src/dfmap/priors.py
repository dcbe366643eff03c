"""Minnesota-style shrinkage structure and the adaptive loading-shrinkage update.

Loadings and VAR coefficients get zero-centered Gaussian priors whose
precision grows with the lag a coefficient attaches to (lag decay). Each
variable's overall loading shrinkage can in addition be refreshed inside the
EM loop from a Gamma hyperprior, which has a closed-form posterior mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelOrder, Theta

__all__ = [
    "MODE_MAP",
    "MODE_ML",
    "PriorSpec",
    "lag_decay_matrix",
    "prior_precisions",
    "expected_eta_lambda",
    "log_prior",
    "log_prior_terms",
]

MODE_MAP = "map"
MODE_ML = "ml"

#: Shrinkage returned for an exactly-zero loading row under a flat hyperprior,
#: so the loading update stays a finite linear system.
ETA_CAP = 1e8


@dataclass(frozen=True)
class PriorSpec:
    """Shrinkage hyperparameters plus the estimator mode.

    ``eta_phi`` is the overall VAR-coefficient shrinkage (shared across
    factors), ``eta_lambda`` the per-variable loading shrinkage (scalar
    broadcasts), ``d_lambda``/``d_phi`` the lag-decay exponents and
    ``alpha_lambda``/``beta_lambda`` the Gamma hyperprior parameters used by
    the adaptive refresh. Mode ``"ml"`` switches all shrinkage off and flips
    the variance updates to their maximum-likelihood numerators.

    ``beta_lambda`` defaults to a strictly positive value: in the flat limit
    (both hyperprior parameters zero) the refreshed shrinkage is unbounded
    and the loading/factor scale indeterminacy lets it ratchet upward
    indefinitely, degrading the fit; a positive rate caps it.
    """

    eta_phi: float = 0.01
    d_lambda: float = 2.0
    d_phi: float = 2.0
    alpha_lambda: float = 0.0
    beta_lambda: float = 0.5
    adaptive: bool = True
    eta_lambda: np.ndarray | float = 0.0
    sigma0: float = 1e4
    mode: str = MODE_MAP
    eta_cap: float = ETA_CAP

    def __post_init__(self) -> None:
        if self.mode not in (MODE_MAP, MODE_ML):
            raise ValueError(f"mode must be '{MODE_MAP}' or '{MODE_ML}', got {self.mode!r}")
        if self.mode == MODE_ML:
            # ML is the zero-shrinkage limit; silently coerce.
            object.__setattr__(self, "eta_phi", 0.0)
            object.__setattr__(self, "eta_lambda", 0.0)
            object.__setattr__(self, "adaptive", False)
        eta_lambda = np.atleast_1d(np.asarray(self.eta_lambda, dtype=float)).copy()
        eta_lambda.setflags(write=False)
        object.__setattr__(self, "eta_lambda", eta_lambda)
        for name in ("eta_phi", "d_lambda", "d_phi", "alpha_lambda",
                     "beta_lambda", "sigma0", "eta_cap"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
            object.__setattr__(self, name, value)
        if np.any(eta_lambda < 0) or not np.all(np.isfinite(eta_lambda)):
            raise ValueError("eta_lambda entries must be finite and >= 0")

    @property
    def is_ml(self) -> bool:
        return self.mode == MODE_ML

    def eta_lambda_vector(self, n: int) -> np.ndarray:
        """Per-variable loading shrinkage broadcast to length ``n``."""
        eta = np.asarray(self.eta_lambda, dtype=float)
        if eta.size == 1:
            return np.full(n, float(eta.ravel()[0]))
        if eta.shape != (n,):
            raise ValueError(f"eta_lambda has shape {eta.shape}, expected ({n},)")
        return eta.copy()


def lag_decay_weights(r: int, lag_count: int, d: float, offset: int) -> np.ndarray:
    """Diagonal of the lag-decay matrix as a vector.

    ``offset=1`` produces ``lag_count + 1`` blocks weighted ``(l+1)**d`` for
    ``l = 0..lag_count`` (loadings, lag 0 included); ``offset=0`` produces
    ``lag_count`` blocks weighted ``l**d`` for ``l = 1..lag_count`` (VAR).
    """
    if d < 0:
        raise ValueError(f"lag-decay exponent must be >= 0, got {d}")
    if offset not in (0, 1):
        raise ValueError("offset must be 0 or 1")
    n_blocks = lag_count + 1 if offset == 1 else lag_count
    if n_blocks < 1:
        raise ValueError("need at least one lag block")
    weights = np.arange(1, n_blocks + 1, dtype=float) ** d
    return np.repeat(weights, r)


def lag_decay_matrix(r: int, lag_count: int, d: float, offset: int) -> np.ndarray:
    """Block-diagonal lag-decay matrix (each block ``weight * I_r``)."""
    return np.diag(lag_decay_weights(r, lag_count, d, offset))


def prior_precisions(spec: PriorSpec, order: ModelOrder) -> tuple[np.ndarray, np.ndarray]:
    """Prior precision matrices for every loading row and VAR row.

    Returns ``(vinv, winv)`` stacked as ``(n, k, k)`` and ``(r, rq, rq)``
    where ``k = r(p+1)``: the loading row precision is the per-variable
    shrinkage times the loading lag-decay matrix, the VAR row precision the
    shared shrinkage times the VAR lag-decay matrix. ML mode yields zeros.
    """
    j_lam = lag_decay_matrix(order.r, order.p, spec.d_lambda, offset=1)
    j_phi = lag_decay_matrix(order.r, order.q, spec.d_phi, offset=0)
    eta = spec.eta_lambda_vector(order.n)
    vinv = eta[:, None, None] * j_lam[None, :, :]
    winv = np.broadcast_to(spec.eta_phi * j_phi, (order.r,) + j_phi.shape).copy()
    return vinv, winv


def expected_eta_lambda(lambda_i: np.ndarray, J: np.ndarray, alpha: float,
                        beta: float, order: ModelOrder,
                        cap: float = ETA_CAP) -> float:
    """Posterior-mean loading shrinkage for one variable.

    The Gamma hyperprior combined with the Gaussian loading prior has a Gamma
    posterior whose mean is ``(r(p+1)/2 + alpha) / (l'Jl/2 + beta)``. With a
    flat hyperprior and a zero loading row the mean diverges; the returned
    value is capped so downstream linear systems stay finite.
    """
    lambda_i = np.asarray(lambda_i, dtype=float).ravel()
    numer = order.r * (order.p + 1) / 2.0 + alpha
    denom = 0.5 * float(lambda_i @ (np.asarray(J) @ lambda_i)) + beta
    if denom <= 0.0:
        return cap
    return min(numer / denom, cap)


def log_prior_terms(theta: Theta, spec: PriorSpec, order: ModelOrder) -> dict[str, float]:
    """Decomposed log-prior contributions (constants in theta dropped).

    ``quad_*`` are the Gaussian quadratic forms, ``logdet_*`` their
    log-determinant normalizers (present only where the precision matrix is
    nonzero, which keeps the ML limit well defined), and ``precision_*`` the
    diffuse precision-prior terms, which survive in every mode.
    """
    theta.check_order(order)
    vinv, winv = prior_precisions(spec, order)
    quad_lambda = 0.0
    logdet_lambda = 0.0
    for i in range(order.n):
        row = theta.Lambda[i]
        quad_lambda -= 0.5 * float(row @ vinv[i] @ row)
        diag = np.diag(vinv[i])
        if np.all(diag > 0):
            logdet_lambda += 0.5 * float(np.sum(np.log(diag)))
    quad_phi = 0.0
    logdet_phi = 0.0
    for j in range(order.r):
        row = theta.Phi[j]
        quad_phi -= 0.5 * float(row @ winv[j] @ row)
        diag = np.diag(winv[j])
        if np.all(diag > 0):
            logdet_phi += 0.5 * float(np.sum(np.log(diag)))
    return {
        "quad_lambda": quad_lambda,
        "quad_phi": quad_phi,
        "logdet_lambda": logdet_lambda,
        "logdet_phi": logdet_phi,
        "precision_psi": -0.5 * float(np.sum(np.log(theta.psi))),
        "precision_omega": -0.5 * float(np.sum(np.log(theta.omega))),
    }


def log_prior(theta: Theta, spec: PriorSpec, order: ModelOrder) -> float:
    """Log prior density at ``theta`` up to an additive constant."""
    return float(sum(log_prior_terms(theta, spec, order).values()))
