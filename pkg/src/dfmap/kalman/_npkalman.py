"""Pure-NumPy filter and smoother kernels.

Reference implementation of the kernels also provided by the compiled
extension; both must produce the same output on the same input. Missing data
is handled by deleting the unavailable observation rows at each time step,
the Joseph form keeps filtered covariances positive semidefinite, and every
symmetric solve goes through a Cholesky factorization with a one-shot jitter
retry.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..errors import NumericError

LN_2PI = float(np.log(2.0 * np.pi))
CHOL_JITTER = 1e-10


def _cho_factor_jittered(S: np.ndarray, what: str, t: int):
    try:
        return cho_factor(S, lower=True, check_finite=False)
    except LinAlgError:
        pass
    S = S + CHOL_JITTER * np.eye(S.shape[0])
    try:
        return cho_factor(S, lower=True, check_finite=False)
    except LinAlgError:
        raise NumericError(f"{what} not invertible after jitter at t={t}") from None


def filter_missing(Z, Tmat, rqr, hdiag, P0, values, mask):
    """Kalman filter with per-step row deletion.

    ``values``/``mask`` are ``n x T``; masked cells never enter an update and
    a step with no available rows performs prediction only. Returns predicted
    and filtered moments indexed ``0..T`` (slot 0 holds the initial state)
    plus the marginal log-likelihood of the available cells.
    """
    n, T = values.shape
    m = Tmat.shape[0]
    eye_m = np.eye(m)

    pred_mean = np.zeros((T + 1, m))
    pred_cov = np.zeros((T + 1, m, m))
    filt_mean = np.zeros((T + 1, m))
    filt_cov = np.zeros((T + 1, m, m))
    pred_cov[0] = P0
    filt_cov[0] = P0

    a = np.zeros(m)
    P = np.array(P0, dtype=float)
    loglik = 0.0
    for t in range(1, T + 1):
        a = Tmat @ a
        P = Tmat @ P @ Tmat.T + rqr
        P = 0.5 * (P + P.T)
        pred_mean[t] = a
        pred_cov[t] = P

        idx = np.flatnonzero(mask[:, t - 1])
        if idx.size:
            Zt = Z[idx]
            ht = hdiag[idx]
            v = values[idx, t - 1] - Zt @ a
            if not np.all(np.isfinite(v)):
                raise NumericError(f"non-finite innovation at t={t}")
            PZt = P @ Zt.T
            S = Zt @ PZt + np.diag(ht)
            factor = _cho_factor_jittered(S, "innovation covariance", t)
            logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
            alpha = cho_solve(factor, v, check_finite=False)
            loglik += -0.5 * (idx.size * LN_2PI + logdet + float(v @ alpha))
            K = cho_solve(factor, PZt.T, check_finite=False).T
            a = a + K @ v
            B = eye_m - K @ Zt
            P = B @ P @ B.T + (K * ht) @ K.T
            P = 0.5 * (P + P.T)
        if not np.isfinite(loglik) or not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite filter state at t={t}")
        filt_mean[t] = a
        filt_cov[t] = P
    return pred_mean, pred_cov, filt_mean, filt_cov, loglik


def smooth(Tmat, pred_mean, pred_cov, filt_mean, filt_cov):
    """Fixed-interval smoother with the lag-one cross-covariance.

    Runs a backward pass over the filter output. ``lag1[t]`` holds
    ``Cov(state_t, state_{t-1} | all data)`` for ``t = 1..T``; slot 0 is zero
    by convention.
    """
    T = pred_mean.shape[0] - 1
    m = Tmat.shape[0]
    sm_mean = np.zeros_like(filt_mean)
    sm_cov = np.zeros_like(filt_cov)
    lag1 = np.zeros((T + 1, m, m))
    sm_mean[T] = filt_mean[T]
    sm_cov[T] = filt_cov[T]
    for t in range(T - 1, -1, -1):
        W = Tmat @ filt_cov[t]
        factor = _cho_factor_jittered(pred_cov[t + 1], "predicted covariance", t + 1)
        J = cho_solve(factor, W, check_finite=False).T
        sm_mean[t] = filt_mean[t] + J @ (sm_mean[t + 1] - pred_mean[t + 1])
        C = sm_cov[t + 1] - pred_cov[t + 1]
        sm_cov[t] = filt_cov[t] + J @ C @ J.T
        sm_cov[t] = 0.5 * (sm_cov[t] + sm_cov[t].T)
        lag1[t + 1] = sm_cov[t + 1] @ J.T
    return sm_mean, sm_cov, lag1
