# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementation of the hot kernels.

Same contracts as ``_core_py``; small dense linear algebra is hand rolled
because the block sizes are tiny (a few dozen channels at most) and the
recursion is called once per timestep.
"""

import numpy as np

from libc.math cimport sqrt

from .exceptions import NumericalSingularityError

cdef double PIVOT_TOL_SQ = 1e-24  # squared Cholesky pivot threshold (pivot 1e-12)


def gl_table(alphas, int horizon):
    """Coefficient table built by the multiplicative recurrence."""
    cdef double[::1] a = np.ascontiguousarray(alphas, dtype=np.float64)
    cdef Py_ssize_t C = a.shape[0]
    out_arr = np.empty((C, horizon + 1), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t c, j
    cdef double jd
    for c in range(C):
        out[c, 0] = 1.0
        for j in range(1, horizon + 1):
            jd = <double> j
            out[c, j] = out[c, j - 1] * ((jd - 1.0 - a[c]) / jd)
    return out_arr


def frac_diff(values, coeffs):
    """Channelwise causal convolution truncated at the table horizon."""
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(coeffs, dtype=np.float64)
    cdef Py_ssize_t C = v.shape[0], T = v.shape[1], J = c.shape[1] - 1
    out_arr = np.zeros((C, T), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t ch, k, j, jmax
    cdef double cj
    jmax = J if J < T - 1 else T - 1
    for ch in range(C):
        for j in range(jmax + 1):
            cj = c[ch, j]
            if cj == 0.0:
                continue
            for k in range(j, T):
                out[ch, k] += cj * v[ch, k - j]
    return out_arr


cdef int _cholesky(double[:, ::1] M, double[:, ::1] L, Py_ssize_t d) nogil:
    """Lower Cholesky factor of M into L; 0 on success, -1 on tiny pivot."""
    cdef Py_ssize_t i, j, l
    cdef double acc
    for i in range(d):
        for j in range(i + 1):
            acc = M[i, j]
            for l in range(j):
                acc -= L[i, l] * L[j, l]
            if i == j:
                if acc <= PIVOT_TOL_SQ:
                    return -1
                L[i, i] = sqrt(acc)
            else:
                L[i, j] = acc / L[j, j]
        for j in range(i + 1, d):
            L[i, j] = 0.0
    return 0


cdef void _chol_solve_cols(double[:, ::1] L, double[:, ::1] B,
                           double[:, ::1] X, double[:, ::1] work,
                           Py_ssize_t d, Py_ssize_t ncol) nogil:
    """Solve (L L') X = B for each column of B (d x ncol)."""
    cdef Py_ssize_t col, i, l
    cdef double acc
    for col in range(ncol):
        for i in range(d):
            acc = B[i, col]
            for l in range(i):
                acc -= L[i, l] * work[l, col]
            work[i, col] = acc / L[i, i]
        for i in range(d - 1, -1, -1):
            acc = work[i, col]
            for l in range(i + 1, d):
                acc -= L[l, i] * X[l, col]
            X[i, col] = acc / L[i, i]


cdef void _chol_inverse(double[:, ::1] L, double[:, ::1] Linv,
                        double[:, ::1] out, Py_ssize_t d) nogil:
    """Inverse of L L' given the factor L (uses Linv as scratch)."""
    cdef Py_ssize_t i, j, l, start
    cdef double acc
    for j in range(d):
        Linv[j, j] = 1.0 / L[j, j]
        for i in range(j + 1, d):
            acc = 0.0
            for l in range(j, i):
                acc -= L[i, l] * Linv[l, j]
            Linv[i, j] = acc / L[i, i]
    for i in range(d):
        for j in range(i + 1):
            acc = 0.0
            start = i if i > j else j
            for l in range(start, d):
                acc += Linv[l, i] * Linv[l, j]
            out[i, j] = acc
            out[j, i] = acc


def kalman_sweep(A12, A22, Sigma1, G, Sigma2, psi_lat, ctrl, y, z0, P0):
    """Latent-state filter recursion; see the numpy twin for the contract."""
    cdef double[:, ::1] a12 = np.ascontiguousarray(A12, dtype=np.float64)
    cdef double[:, ::1] a22 = np.ascontiguousarray(A22, dtype=np.float64)
    cdef double[:, ::1] s1 = np.ascontiguousarray(Sigma1, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(G, dtype=np.float64)
    cdef double[:, ::1] s2 = np.ascontiguousarray(Sigma2, dtype=np.float64)
    cdef double[:, ::1] psi = np.ascontiguousarray(psi_lat, dtype=np.float64)
    cdef double[:, ::1] c = np.ascontiguousarray(ctrl, dtype=np.float64)
    cdef double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] z0v = np.ascontiguousarray(z0, dtype=np.float64)
    cdef double[:, ::1] p0 = np.ascontiguousarray(P0, dtype=np.float64)

    cdef Py_ssize_t m = a22.shape[0], n = a12.shape[0], K = yv.shape[1]
    cdef Py_ssize_t k, i, j, l, a, b

    zh_arr = np.empty((m, K + 1))
    Ph_arr = np.empty((K + 1, m, m))
    zt_arr = np.empty((m, K))
    Pt_arr = np.empty((K, m, m))
    gains_arr = np.empty((K, m, n))
    innov_arr = np.empty((n, K))
    cdef double[:, ::1] zh = zh_arr
    cdef double[:, :, ::1] Ph = Ph_arr
    cdef double[:, ::1] ztb = zt_arr
    cdef double[:, :, ::1] Ptb = Pt_arr
    cdef double[:, :, ::1] gains = gains_arr
    cdef double[:, ::1] innov = innov_arr

    # Scratch buffers reused every step.
    Am_arr = np.empty((m, m))
    Pt = np.empty((m, m))
    tmp_mm = np.empty((m, m))
    tmp_mm2 = np.empty((m, m))
    Pt_inv = np.empty((m, m))
    Minfo = np.empty((m, m))
    Lm = np.empty((m, m))
    Lm2 = np.empty((m, m))
    S = np.empty((n, n))
    Ls = np.empty((n, n))
    tmp_nm = np.empty((n, m))
    Xnm = np.empty((n, m))
    worknm = np.empty((n, m))
    zt = np.empty(m)
    r = np.empty(n)
    cdef double[:, ::1] am = Am_arr
    cdef double[:, ::1] pt = Pt
    cdef double[:, ::1] t1 = tmp_mm
    cdef double[:, ::1] t2 = tmp_mm2
    cdef double[:, ::1] ptinv = Pt_inv
    cdef double[:, ::1] minfo = Minfo
    cdef double[:, ::1] lm = Lm
    cdef double[:, ::1] lm2 = Lm2
    cdef double[:, ::1] sb = S
    cdef double[:, ::1] ls = Ls
    cdef double[:, ::1] tnm = tmp_nm
    cdef double[:, ::1] xnm = Xnm
    cdef double[:, ::1] wnm = worknm
    cdef double[::1] ztv = zt
    cdef double[::1] rv = r

    cdef double acc
    cdef int status

    for i in range(m):
        zh[i, 0] = z0v[i]
        for j in range(m):
            Ph[0, i, j] = p0[i, j]
            am[i, j] = a22[i, j]
        am[i, i] = a22[i, i] - psi[i, 1]

    for k in range(1, K + 1):
        # Predicted mean.
        for i in range(m):
            acc = c[i, k - 1]
            for j in range(m):
                acc += a22[i, j] * zh[j, k - 1]
            for j in range(1, k + 1):
                acc -= psi[i, j] * zh[i, k - j]
            ztv[i] = acc

        # Predicted covariance: t1 = Am @ Ph[k-1]; pt = t1 @ Am' + Sigma2 + tail.
        for i in range(m):
            for j in range(m):
                acc = 0.0
                for l in range(m):
                    acc += am[i, l] * Ph[k - 1, l, j]
                t1[i, j] = acc
        for i in range(m):
            for j in range(m):
                acc = s2[i, j]
                for l in range(m):
                    acc += t1[i, l] * am[j, l]
                pt[i, j] = acc
        for j in range(2, k + 1):
            for a in range(m):
                for b in range(m):
                    pt[a, b] += psi[a, j] * psi[b, j] * Ph[k - j, a, b]
        for i in range(m):
            for j in range(i):
                acc = 0.5 * (pt[i, j] + pt[j, i])
                pt[i, j] = acc
                pt[j, i] = acc

        # Innovation covariance and gain.
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for l in range(m):
                    acc += a12[i, l] * pt[l, j]
                tnm[i, j] = acc
        for i in range(n):
            for j in range(n):
                acc = s1[i, j]
                for l in range(m):
                    acc += tnm[i, l] * a12[j, l]
                sb[i, j] = acc
        for i in range(n):
            for j in range(i):
                acc = 0.5 * (sb[i, j] + sb[j, i])
                sb[i, j] = acc
                sb[j, i] = acc
        status = _cholesky(sb, ls, n)
        if status != 0:
            raise NumericalSingularityError(
                f"innovation covariance is not positive definite at step {k}"
            )
        _chol_solve_cols(ls, tnm, xnm, wnm, n, m)  # xnm = S^-1 A12 Pt

        # Innovation and filtered mean.
        for i in range(n):
            acc = yv[i, k - 1]
            for l in range(m):
                acc -= a12[i, l] * ztv[l]
            rv[i] = acc
        for i in range(m):
            acc = ztv[i]
            for l in range(n):
                acc += xnm[l, i] * rv[l]
            zh[i, k] = acc

        # Information-form covariance update.
        status = _cholesky(pt, lm, m)
        if status != 0:
            raise NumericalSingularityError(
                f"predicted covariance is not positive definite at step {k}"
            )
        _chol_inverse(lm, t1, ptinv, m)
        for i in range(m):
            for j in range(m):
                minfo[i, j] = g[i, j] + ptinv[i, j]
        status = _cholesky(minfo, lm2, m)
        if status != 0:
            raise NumericalSingularityError(
                f"posterior information matrix is not positive definite at step {k}"
            )
        _chol_inverse(lm2, t1, t2, m)
        for i in range(m):
            for j in range(m):
                Ph[k, i, j] = 0.5 * (t2[i, j] + t2[j, i])

        for i in range(m):
            ztb[i, k - 1] = ztv[i]
            for j in range(m):
                Ptb[k - 1, i, j] = pt[i, j]
            for j in range(n):
                gains[k - 1, i, j] = xnm[j, i]
        for i in range(n):
            innov[i, k - 1] = rv[i]

    return (
        zh_arr[:, 1:].copy(),
        Ph_arr[1:].copy(),
        zt_arr,
        Pt_arr,
        gains_arr,
        innov_arr,
    )
