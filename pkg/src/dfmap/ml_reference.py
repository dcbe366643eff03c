"""Plain maximum-likelihood EM updates, kept as an independent check.

Implements the textbook zero-shrinkage update equations: coefficient blocks
solve unpenalized normal equations and the variance updates divide by ``T``
and ``T_i``. The penalized estimator in ML mode must reproduce these
iterates; tests compare the two paths step by step.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .em import PRECISION_MAX, PRECISION_MIN, e_step
from .model import ModelOrder, Panel, Theta

__all__ = ["reference_m_step", "run_reference"]


def reference_m_step(sums, theta_k: Theta) -> Theta:
    """One unpenalized M-step from the E-step sums."""
    T = sums.n_periods
    factor = cho_factor(sums.gram_phi, lower=True, check_finite=False)
    Phi = cho_solve(factor, sums.cross_phi.T, check_finite=False).T
    r = Phi.shape[0]
    omega = np.empty(r)
    for j in range(r):
        phi_j = Phi[j]
        ssr = (sums.square_f[j] - 2.0 * float(sums.cross_phi[j] @ phi_j)
               + float(phi_j @ sums.gram_phi @ phi_j))
        omega[j] = (float(np.clip(float(T) / ssr, PRECISION_MIN, PRECISION_MAX))
                    if ssr > 0 else PRECISION_MAX)

    n = sums.gram_lam.shape[0]
    Lambda = np.empty_like(sums.cross_lam)
    psi = np.empty(n)
    for i in range(n):
        factor_i = cho_factor(sums.gram_lam[i], lower=True, check_finite=False)
        Lambda[i] = cho_solve(factor_i, sums.cross_lam[i], check_finite=False)
        lam_i = Lambda[i]
        ssr = (sums.square_y[i] - 2.0 * float(lam_i @ sums.cross_lam[i])
               + float(lam_i @ sums.gram_lam[i] @ lam_i))
        psi[i] = (float(np.clip(float(sums.n_obs[i]) / ssr, PRECISION_MIN, PRECISION_MAX))
                  if ssr > 0 else PRECISION_MAX)
    return Theta(Lambda=Lambda, Phi=Phi, psi=psi, omega=omega)


def run_reference(panel: Panel, order: ModelOrder, sigma0: float, theta0: Theta,
                  n_iter: int, backend: str | None = None) -> list[Theta]:
    """Iterates ``theta_1 .. theta_{n_iter}`` of the plain ML EM recursion."""
    iterates = []
    theta = theta0
    for _ in range(n_iter):
        sums, _, _ = e_step(theta, panel, order, sigma0, backend=backend)
        theta = reference_m_step(sums, theta)
        iterates.append(theta)
    return iterates
