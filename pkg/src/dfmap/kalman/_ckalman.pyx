# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled filter and smoother kernels.

Same algorithm as the NumPy fallback (row deletion per step, Joseph-form
update, Cholesky solves with a one-shot jitter retry); hand-written loops
remove the per-step Python and BLAS-dispatch overhead that dominates at the
small state dimensions typical for this model.
"""

import numpy as np

from ..errors import NumericError

from libc.math cimport isfinite, log, sqrt

cdef double LN_2PI = 1.8378770664093453
cdef double CHOL_JITTER = 1e-10


cdef int _chol_lower(double[:, :] L, Py_ssize_t k) noexcept:
    """In-place lower Cholesky of the leading k x k block; 1 on failure."""
    cdef Py_ssize_t i, j, l
    cdef double s
    for j in range(k):
        s = L[j, j]
        for l in range(j):
            s -= L[j, l] * L[j, l]
        if s <= 0.0 or not isfinite(s):
            return 1
        s = sqrt(s)
        L[j, j] = s
        for i in range(j + 1, k):
            for l in range(j):
                L[i, j] -= L[i, l] * L[j, l]
            L[i, j] /= s
    return 0


cdef int _chol_copy(const double[:, :] src, double[:, :] L, Py_ssize_t k):
    """Copy the leading k x k block of src into L and factor, retrying once
    with diagonal jitter; 1 if both attempts fail."""
    cdef Py_ssize_t i, j
    for i in range(k):
        for j in range(k):
            L[i, j] = src[i, j]
    if _chol_lower(L, k) == 0:
        return 0
    for i in range(k):
        for j in range(k):
            L[i, j] = src[i, j]
        L[i, i] += CHOL_JITTER
    return _chol_lower(L, k)


cdef void _chol_solve(double[:, :] L, double[:] x, Py_ssize_t k) noexcept:
    """Solve (L L') x = b in place given the lower factor."""
    cdef Py_ssize_t i, l
    cdef double s
    for i in range(k):
        s = x[i]
        for l in range(i):
            s -= L[i, l] * x[l]
        x[i] = s / L[i, i]
    for i in range(k - 1, -1, -1):
        s = x[i]
        for l in range(i + 1, k):
            s -= L[l, i] * x[l]
        x[i] = s / L[i, i]


def filter_missing(object Z_in, object Tmat_in, object rqr_in, object hdiag_in,
                   object P0_in, object values_in, object mask_in):
    """Kalman filter with per-step row deletion; matches the NumPy kernel."""
    cdef const double[:, ::1] Z = np.ascontiguousarray(Z_in, dtype=np.float64)
    cdef const double[:, ::1] Tm = np.ascontiguousarray(Tmat_in, dtype=np.float64)
    cdef const double[:, ::1] rqr = np.ascontiguousarray(rqr_in, dtype=np.float64)
    cdef const double[::1] hdiag = np.ascontiguousarray(hdiag_in, dtype=np.float64)
    cdef const double[:, ::1] values = np.ascontiguousarray(values_in, dtype=np.float64)
    cdef const unsigned char[:, ::1] mask = np.ascontiguousarray(mask_in, dtype=np.uint8)

    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t T = values.shape[1]
    cdef Py_ssize_t m = Tm.shape[0]

    pm_arr = np.zeros((T + 1, m))
    pc_arr = np.zeros((T + 1, m, m))
    fm_arr = np.zeros((T + 1, m))
    fc_arr = np.zeros((T + 1, m, m))
    cdef double[:, ::1] pm = pm_arr
    cdef double[:, :, ::1] pc = pc_arr
    cdef double[:, ::1] fm = fm_arr
    cdef double[:, :, ::1] fc = fc_arr

    cdef double[::1] a = np.zeros(m)
    cdef double[::1] anew = np.zeros(m)
    cdef double[:, ::1] P = np.array(P0_in, dtype=np.float64)
    cdef double[:, ::1] tmp_mm = np.zeros((m, m))
    cdef double[:, ::1] Pnew = np.zeros((m, m))
    cdef double[:, ::1] S = np.zeros((n, n))
    cdef double[:, ::1] L = np.zeros((n, n))
    cdef double[:, ::1] PZt = np.zeros((m, n))
    cdef double[:, ::1] K = np.zeros((m, n))
    cdef double[:, ::1] B = np.zeros((m, m))
    cdef double[:, ::1] BP = np.zeros((m, m))
    cdef double[::1] v = np.zeros(n)
    cdef double[::1] w = np.zeros(n)
    cdef double[::1] rhs = np.zeros(n)
    cdef Py_ssize_t[::1] idx = np.zeros(n, dtype=np.intp)

    cdef double loglik = 0.0
    cdef double s, logdet, quad
    cdef Py_ssize_t t, i, j, l, ii, jj, k

    pc_arr[0] = P0_in
    fc_arr[0] = P0_in

    for t in range(1, T + 1):
        # prediction: anew = Tm a, Pnew = Tm P Tm' + rqr (symmetrized)
        for i in range(m):
            s = 0.0
            for j in range(m):
                s += Tm[i, j] * a[j]
            anew[i] = s
        for i in range(m):
            for j in range(m):
                s = 0.0
                for l in range(m):
                    s += P[i, l] * Tm[j, l]
                tmp_mm[i, j] = s
        for i in range(m):
            for j in range(m):
                s = rqr[i, j]
                for l in range(m):
                    s += Tm[i, l] * tmp_mm[l, j]
                Pnew[i, j] = s
        for i in range(m):
            a[i] = anew[i]
            for j in range(i, m):
                s = 0.5 * (Pnew[i, j] + Pnew[j, i])
                P[i, j] = s
                P[j, i] = s
        for i in range(m):
            pm[t, i] = a[i]
            for j in range(m):
                pc[t, i, j] = P[i, j]

        k = 0
        for i in range(n):
            if mask[i, t - 1]:
                idx[k] = i
                k += 1
        if k > 0:
            for ii in range(k):
                i = idx[ii]
                s = values[i, t - 1]
                for j in range(m):
                    s -= Z[i, j] * a[j]
                if not isfinite(s):
                    raise NumericError(f"non-finite innovation at t={t}")
                v[ii] = s
                for l in range(m):
                    s = 0.0
                    for j in range(m):
                        s += P[l, j] * Z[i, j]
                    PZt[l, ii] = s
            for ii in range(k):
                i = idx[ii]
                for jj in range(k):
                    s = 0.0
                    for l in range(m):
                        s += Z[i, l] * PZt[l, jj]
                    S[ii, jj] = s
                S[ii, ii] += hdiag[i]
            if _chol_copy(S, L, k) != 0:
                raise NumericError(
                    f"innovation covariance not invertible after jitter at t={t}"
                )
            logdet = 0.0
            for ii in range(k):
                logdet += 2.0 * log(L[ii, ii])
                w[ii] = v[ii]
            quad = 0.0
            for ii in range(k):
                s = w[ii]
                for l in range(ii):
                    s -= L[ii, l] * w[l]
                w[ii] = s / L[ii, ii]
                quad += w[ii] * w[ii]
            loglik += -0.5 * (k * LN_2PI + logdet + quad)
            # K = P Z' S^{-1}, row by row of K
            for l in range(m):
                for ii in range(k):
                    rhs[ii] = PZt[l, ii]
                _chol_solve(L, rhs, k)
                for ii in range(k):
                    K[l, ii] = rhs[ii]
            for l in range(m):
                s = a[l]
                for ii in range(k):
                    s += K[l, ii] * v[ii]
                anew[l] = s
            # Joseph form: P = B P B' + K diag(h) K' with B = I - K Z_idx
            for l in range(m):
                for j in range(m):
                    s = 1.0 if l == j else 0.0
                    for ii in range(k):
                        s -= K[l, ii] * Z[idx[ii], j]
                    B[l, j] = s
            for l in range(m):
                for j in range(m):
                    s = 0.0
                    for i in range(m):
                        s += B[l, i] * P[i, j]
                    BP[l, j] = s
            for l in range(m):
                for j in range(m):
                    s = 0.0
                    for i in range(m):
                        s += BP[l, i] * B[j, i]
                    for ii in range(k):
                        s += K[l, ii] * hdiag[idx[ii]] * K[j, ii]
                    Pnew[l, j] = s
            for l in range(m):
                a[l] = anew[l]
                for j in range(l, m):
                    s = 0.5 * (Pnew[l, j] + Pnew[j, l])
                    P[l, j] = s
                    P[j, l] = s
        if not isfinite(loglik):
            raise NumericError(f"non-finite filter state at t={t}")
        for i in range(m):
            fm[t, i] = a[i]
            for j in range(m):
                fc[t, i, j] = P[i, j]
    return pm_arr, pc_arr, fm_arr, fc_arr, loglik


def smooth(object Tmat_in, object pm_in, object pc_in, object fm_in, object fc_in):
    """Fixed-interval smoother with lag-one cross-covariances."""
    cdef const double[:, ::1] Tm = np.ascontiguousarray(Tmat_in, dtype=np.float64)
    cdef const double[:, ::1] pm = np.ascontiguousarray(pm_in, dtype=np.float64)
    cdef const double[:, :, ::1] pc = np.ascontiguousarray(pc_in, dtype=np.float64)
    cdef const double[:, ::1] fm = np.ascontiguousarray(fm_in, dtype=np.float64)
    cdef const double[:, :, ::1] fc = np.ascontiguousarray(fc_in, dtype=np.float64)

    cdef Py_ssize_t T = pm.shape[0] - 1
    cdef Py_ssize_t m = Tm.shape[0]

    sm_arr = np.zeros((T + 1, m))
    sc_arr = np.zeros((T + 1, m, m))
    lag1_arr = np.zeros((T + 1, m, m))
    cdef double[:, ::1] sm = sm_arr
    cdef double[:, :, ::1] sc = sc_arr
    cdef double[:, :, ::1] lag1 = lag1_arr

    cdef double[:, ::1] L = np.zeros((m, m))
    cdef double[:, ::1] W = np.zeros((m, m))
    cdef double[:, ::1] J = np.zeros((m, m))
    cdef double[:, ::1] JC = np.zeros((m, m))
    cdef double[:, ::1] C = np.zeros((m, m))
    cdef double[::1] col = np.zeros(m)
    cdef double[::1] d = np.zeros(m)
    cdef double s
    cdef Py_ssize_t t, i, j, l

    for i in range(m):
        sm[T, i] = fm[T, i]
        for j in range(m):
            sc[T, i, j] = fc[T, i, j]

    for t in range(T - 1, -1, -1):
        # J = fc[t] Tm' pc[t+1]^{-1}, via column solves of pc[t+1] X = Tm fc[t]
        for i in range(m):
            for j in range(m):
                s = 0.0
                for l in range(m):
                    s += Tm[i, l] * fc[t, l, j]
                W[i, j] = s
        if _chol_copy(pc[t + 1], L, m) != 0:
            raise NumericError(
                f"predicted covariance not invertible after jitter at t={t + 1}"
            )
        for j in range(m):
            for i in range(m):
                col[i] = W[i, j]
            _chol_solve(L, col, m)
            for i in range(m):
                J[j, i] = col[i]
        for i in range(m):
            d[i] = sm[t + 1, i] - pm[t + 1, i]
        for i in range(m):
            s = fm[t, i]
            for l in range(m):
                s += J[i, l] * d[l]
            sm[t, i] = s
        for i in range(m):
            for j in range(m):
                C[i, j] = sc[t + 1, i, j] - pc[t + 1, i, j]
        for i in range(m):
            for j in range(m):
                s = 0.0
                for l in range(m):
                    s += J[i, l] * C[l, j]
                JC[i, j] = s
        # W is free again; reuse it for the unsymmetrized smoothed covariance
        for i in range(m):
            for j in range(m):
                s = fc[t, i, j]
                for l in range(m):
                    s += JC[i, l] * J[j, l]
                W[i, j] = s
        for i in range(m):
            for j in range(i, m):
                s = 0.5 * (W[i, j] + W[j, i])
                sc[t, i, j] = s
                sc[t, j, i] = s
        for i in range(m):
            for j in range(m):
                s = 0.0
                for l in range(m):
                    s += sc[t + 1, i, l] * J[j, l]
                lag1[t + 1, i, j] = s
    return sm_arr, sc_arr, lag1_arr
