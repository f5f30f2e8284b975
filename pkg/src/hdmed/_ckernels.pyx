# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: lasso coordinate sweeps, linearized-ADMM blocks,
rank-one updates of a leading matrix block and the l1 homotopy path.

Signatures mirror :mod:`hdmed._pykernels`; see there for documentation.
"""
from libc.math cimport fabs, sqrt, INFINITY, isfinite
from libc.stdlib cimport malloc, free
from scipy.linalg.cython_blas cimport ddot, daxpy, dger, dsymv, dgemv, dgemm
from scipy.linalg.cython_lapack cimport dgetrf, dgetri

import numpy as np


cdef inline double _soft(double x, double t) nogil:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def cd_sweep(double[::1, :] X, double[::1] r, double[::1] beta,
             const double[::1] colsq, const double[::1] lam,
             const Py_ssize_t[::1] idx, Py_ssize_t n):
    cdef Py_ssize_t k, j
    cdef int nn = <int>n, one = 1
    cdef double g, old, new, delta, step, maxstep = 0.0, inv_n = 1.0 / n
    with nogil:
        for k in range(idx.shape[0]):
            j = idx[k]
            if colsq[j] <= 0.0:
                continue
            old = beta[j]
            g = ddot(&nn, &X[0, j], &one, &r[0], &one) * inv_n + colsq[j] * old
            new = _soft(g, lam[j]) / colsq[j]
            if new != old:
                delta = old - new
                daxpy(&nn, &delta, &X[0, j], &one, &r[0], &one)
                beta[j] = new
                step = fabs(new - old) * colsq[j]
                if step > maxstep:
                    maxstep = step
    return maxstep


def admm_block(double[:, ::1] sigma, const double[::1] d, double tau,
               double lip, double rho, double[::1] w, double[::1] z,
               double[::1] u, double[::1] sw, Py_ssize_t n_iter):
    cdef Py_ssize_t m = sigma.shape[0], i, it
    cdef int mm = <int>m, one = 1
    cdef double alpha = 1.0, beta0 = 0.0
    cdef double thr = 1.0 / (rho * lip), inv_lip = 1.0 / lip
    cdef double v, prim = 0.0, dual = 0.0
    cdef char uplo = b'U'
    cdef double[::1] tmp = np.empty(m)
    cdef double[::1] grad = np.empty(m)
    cdef double[::1] zold = np.empty(m)
    with nogil:
        for it in range(n_iter):
            for i in range(m):
                tmp[i] = sw[i] - d[i] - z[i] + u[i]
            dsymv(&uplo, &mm, &alpha, &sigma[0, 0], &mm, &tmp[0], &one,
                  &beta0, &grad[0], &one)
            for i in range(m):
                w[i] = _soft(w[i] - grad[i] * inv_lip, thr)
            dsymv(&uplo, &mm, &alpha, &sigma[0, 0], &mm, &w[0], &one,
                  &beta0, &sw[0], &one)
            for i in range(m):
                zold[i] = z[i]
                v = sw[i] - d[i] + u[i]
                if v > tau:
                    v = tau
                elif v < -tau:
                    v = -tau
                z[i] = v
                u[i] = u[i] + sw[i] - d[i] - z[i]
        prim = 0.0
        for i in range(m):
            v = sw[i] - d[i] - z[i]
            prim += v * v
            tmp[i] = z[i] - zold[i]
        dsymv(&uplo, &mm, &alpha, &sigma[0, 0], &mm, &tmp[0], &one,
              &beta0, &grad[0], &one)
        dual = 0.0
        for i in range(m):
            dual += grad[i] * grad[i]
    return sqrt(prim), rho * sqrt(dual)


def ger_block(double[::1, :] A, Py_ssize_t k, Py_ssize_t l, double alpha,
              const double[::1] x, const double[::1] y):
    cdef int kk = <int>k, ll = <int>l, lda = <int>A.shape[0], one = 1
    if k == 0 or l == 0:
        return
    if x.shape[0] < k or y.shape[0] < l:
        raise ValueError("vector shorter than the block")
    with nogil:
        dger(&kk, &ll, &alpha, <double*>&x[0], &one, <double*>&y[0], &one,
             &A[0, 0], &lda)


# status codes, kept equal to hdmed._pykernels
cdef enum:
    ST_OK = 0
    ST_RAY = 1
    ST_SINGULAR = 2
    ST_ILL = 3
    ST_EMPTY = 4
    ST_MAX_STEPS = 5


cdef struct _Act:
    # explicit inverse of sigma[T, S] in the leading k x k block of buf
    double* sig       # m x m, column major, symmetric
    double* buf       # m x m inverse buffer
    double* A         # m x m scratch for rebuilds
    double* C         # length-m scratch for the inverse probe
    double* work      # LAPACK workspace, length lwork
    int* ipiv
    Py_ssize_t* T
    Py_ssize_t* S
    double* x
    double* z
    int m
    int k
    int lwork
    int refresh
    int updates
    double tiny


cdef inline double _sig(_Act* a, Py_ssize_t r, Py_ssize_t c) nogil:
    return a.sig[r + c * <Py_ssize_t>a.m]


cdef inline double* _bcol(_Act* a, Py_ssize_t c) nogil:
    return a.buf + c * <Py_ssize_t>a.m


cdef void _Bv(_Act* a, double* u, double* out) nogil:
    # out = B @ u
    cdef char tr = b'N'
    cdef int inc = 1
    cdef double one = 1.0, zero = 0.0
    if a.k == 0:
        return
    dgemv(&tr, &a.k, &a.k, &one, a.buf, &a.m, u, &inc, &zero, out, &inc)


cdef void _vB(_Act* a, double* u, double* out) nogil:
    # out = B' @ u
    cdef char tr = b'T'
    cdef int inc = 1
    cdef double one = 1.0, zero = 0.0
    if a.k == 0:
        return
    dgemv(&tr, &a.k, &a.k, &one, a.buf, &a.m, u, &inc, &zero, out, &inc)


cdef void _ger(_Act* a, double alpha, double* x, int incx, double* y, int incy) nogil:
    if a.k == 0:
        return
    dger(&a.k, &a.k, &alpha, x, &incx, y, &incy, a.buf, &a.m)


cdef int _rebuild(_Act* a) nogil:
    cdef int k = a.k, m = a.m, info = 0, r, c, inc = 1
    cdef char nn = b'N'
    cdef double one = 1.0, zero = 0.0, v
    cdef Py_ssize_t mm = m
    for c in range(k):
        for r in range(k):
            v = _sig(a, a.T[r], a.S[c])
            a.A[r + c * mm] = v
            a.buf[r + c * mm] = v
    a.updates = 0
    if k == 0:
        return ST_OK
    dgetrf(&k, &k, a.buf, &m, a.ipiv, &info)
    if info != 0:
        return ST_SINGULAR
    dgetri(&k, a.buf, &m, a.ipiv, a.work, &a.lwork, &info)
    if info != 0:
        return ST_SINGULAR
    for c in range(k):
        for r in range(k):
            if not isfinite(a.buf[r + c * mm]):
                return ST_SINGULAR
    # probe the inverse with v_r = 1 + r / k: B (A v) should return v
    for r in range(k):
        a.z[r] = 1.0 + <double>r / k
    dgemv(&nn, &k, &k, &one, a.A, &m, a.z, &inc, &zero, a.C, &inc)
    dgemv(&nn, &k, &k, &one, a.buf, &m, a.C, &inc, &zero, a.x, &inc)
    for r in range(k):
        if fabs(a.x[r] - a.z[r]) > 1e-6 * 2.0:
            return ST_ILL
    return ST_OK


cdef inline int _tick(_Act* a) nogil:
    a.updates += 1
    if a.updates >= a.refresh:
        return _rebuild(a)
    return ST_OK


cdef int _grow(_Act* a, Py_ssize_t i, Py_ssize_t j) nogil:
    cdef int k = a.k, r
    cdef Py_ssize_t mm = a.m
    cdef double piv = _sig(a, i, j)
    # x = B @ sigma[T, j], z = sigma[i, S] @ B
    for r in range(k):
        a.z[r] = _sig(a, a.T[r], j)
    _Bv(a, a.z, a.x)
    for r in range(k):
        a.z[r] = _sig(a, i, a.S[r])
    for r in range(k):
        piv -= a.z[r] * a.x[r]
    if not fabs(piv) > a.tiny:
        return ST_SINGULAR
    # reuse the row of sigma before overwriting z
    _vB(a, a.z, a.A)
    _ger(a, 1.0 / piv, a.x, 1, a.A, 1)
    for r in range(k):
        a.buf[r + k * mm] = -a.x[r] / piv
        a.buf[k + r * mm] = -a.A[r] / piv
    a.buf[k + k * mm] = 1.0 / piv
    a.T[k] = i
    a.S[k] = j
    a.k = k + 1
    return _tick(a)


cdef int _replace_row(_Act* a, int kk, Py_ssize_t i) nogil:
    cdef int k = a.k, r
    cdef double piv = 1.0
    for r in range(k):
        a.z[r] = _sig(a, i, a.S[r]) - _sig(a, a.T[kk], a.S[r])
    for r in range(k):
        a.x[r] = _bcol(a, kk)[r]
        piv += a.z[r] * a.x[r]
    if not fabs(piv) > a.tiny:
        return ST_SINGULAR
    _vB(a, a.z, a.A)
    _ger(a, -1.0 / piv, a.x, 1, a.A, 1)
    a.T[kk] = i
    return _tick(a)


cdef int _replace_col(_Act* a, int pos, Py_ssize_t j) nogil:
    cdef int k = a.k, r
    cdef Py_ssize_t mm = a.m
    cdef double piv
    for r in range(k):
        a.z[r] = _sig(a, a.T[r], j)
    _Bv(a, a.z, a.x)
    piv = a.x[pos]
    if not fabs(piv) > a.tiny:
        return ST_SINGULAR
    a.x[pos] -= 1.0
    for r in range(k):
        a.z[r] = a.buf[pos + r * mm]
    _ger(a, -1.0 / piv, a.x, 1, a.z, 1)
    a.S[pos] = j
    return _tick(a)


cdef int _shrink(_Act* a, int kk, int pos) nogil:
    # drop T[kk] and S[pos]; the last entries move into the freed slots
    cdef int k = a.k, r, last = a.k - 1
    cdef Py_ssize_t mm = a.m
    cdef double piv = a.buf[pos + kk * mm]
    if not fabs(piv) > a.tiny:
        return ST_SINGULAR
    for r in range(k):
        a.x[r] = a.buf[r + kk * mm]
        a.z[r] = a.buf[pos + r * mm]
    _ger(a, -1.0 / piv, a.x, 1, a.z, 1)
    for r in range(k):
        a.buf[pos + r * mm] = a.buf[last + r * mm]
    for r in range(k):
        a.buf[r + kk * mm] = a.buf[r + last * mm]
    a.T[kk] = a.T[last]
    a.S[pos] = a.S[last]
    a.k = last
    return _tick(a)


cdef void _sig_times(_Act* a, Py_ssize_t* idx, double* vals, int cnt, double* out) nogil:
    # out = sigma @ v for v supported on idx (columns of sigma = rows)
    cdef int inc = 1, r
    cdef double v
    for r in range(a.m):
        out[r] = 0.0
    for r in range(cnt):
        v = vals[r]
        if v != 0.0:
            daxpy(&a.m, &v, a.sig + idx[r] * <Py_ssize_t>a.m, &inc, out, &inc)


cdef inline double _sign(double v) nogil:
    if v > 0:
        return 1.0
    if v < 0:
        return -1.0
    return 0.0


cdef int _path(_Act* a, double* d, double tau, int max_steps, double relax,
               double* w, double* y, double pivot_rtol, double ray_rtol,
               double* s, double* g, double* yT, double* av, double* bv,
               double* delta, double* y2, double* qv, double* hv,
               Py_ssize_t* Tn, double* sn, signed char* inT, signed char* freecol,
               int* steps_out, double* t_io, int* relaxed_out) nogil:
    cdef int m = a.m, step, k, kn, c, r, pos = 0, k_leave, is_join, enter
    cdef Py_ssize_t i = 0, j, j_enter
    cdef double t = t_io[0], t_top = INFINITY, big = 1.0, tiny, si = 0.0
    cdef double h_max, h_tol, dsum, th, theta_w, theta_t, d_max, s_tol
    cdef double new_sign, cand_t, tr, v
    cdef int st, cand_kind, cand_pos
    cdef Py_ssize_t cand_i
    cdef double cand_s
    for r in range(m * m):
        if fabs(a.sig[r]) > big:
            big = fabs(a.sig[r])
    tiny = 1e-13 * big
    # initial event: join the largest |d|
    i = 0
    for r in range(1, m):
        if fabs(d[r]) > fabs(d[i]):
            i = r
    si = -_sign(d[i])
    is_join = 1
    for step in range(1, max_steps + 1):
        steps_out[0] = step
        t_io[0] = t
        k = a.k
        # ---- pivot: dual ratio test
        for r in range(m):
            freecol[r] = 0
        if is_join:
            for c in range(k):
                a.z[c] = _sig(a, a.S[c], i) * si
            _vB(a, a.z, delta)
            for c in range(k):
                delta[c] = -delta[c]
                Tn[c] = a.T[c]
                sn[c] = s[c]
                y2[c] = yT[c]
                freecol[a.S[c]] = 1
            delta[k] = si
            Tn[k] = i
            sn[k] = si
            y2[k] = 0.0
            kn = k + 1
        else:
            for c in range(k):
                delta[c] = a.buf[pos + c * <Py_ssize_t>m] * g[pos]
                Tn[c] = a.T[c]
                sn[c] = s[c]
                y2[c] = yT[c]
                if c != pos:
                    freecol[a.S[c]] = 1
            kn = k
        _sig_times(a, Tn, y2, kn, qv)
        _sig_times(a, Tn, delta, kn, hv)
        h_max = 0.0
        for r in range(m):
            if fabs(hv[r]) > h_max:
                h_max = fabs(hv[r])
        dsum = 0.0
        d_max = 0.0
        for c in range(kn):
            dsum += fabs(delta[c])
            if fabs(delta[c]) > d_max:
                d_max = fabs(delta[c])
        h_tol = tiny
        if pivot_rtol * h_max > h_tol:
            h_tol = pivot_rtol * h_max
        if ray_rtol * big * dsum > h_tol:
            h_tol = ray_rtol * big * dsum
        theta_w = INFINITY
        j_enter = -1
        for r in range(m):
            if freecol[r]:
                continue
            if hv[r] > h_tol:
                th = (1.0 - qv[r]) / hv[r]
            elif hv[r] < -h_tol:
                th = (-1.0 - qv[r]) / hv[r]
            else:
                continue
            if th < 0.0:
                th = 0.0
            if th < theta_w:
                theta_w = th
                j_enter = r
        s_tol = tiny
        if pivot_rtol * d_max > s_tol:
            s_tol = pivot_rtol * d_max
        theta_t = INFINITY
        k_leave = 0
        for c in range(kn):
            if delta[c] * sn[c] < -s_tol:
                th = -y2[c] / delta[c]
                if th < 0.0:
                    th = 0.0
                if th < theta_t:
                    theta_t = th
                    k_leave = c
        if theta_w == INFINITY and theta_t == INFINITY:
            tr = relax * t
            relaxed_out[0] = 0
            if k > 0 and tr <= t_top:
                relaxed_out[0] = 1
                for c in range(k):
                    w[a.S[c]] = av[c] + tr * bv[c]
                    y[a.T[c]] = yT[c]
            # the ray is returned through delta / Tn
            steps_out[0] = kn
            t_io[0] = t
            return -step
        enter = theta_w <= theta_t
        new_sign = 0.0
        if enter:
            new_sign = -_sign(qv[j_enter] + theta_w * hv[j_enter])
        if is_join:
            if enter:
                st = _grow(a, i, j_enter)
                g[k] = new_sign
                s[k] = si
            else:
                st = _replace_row(a, k_leave, i)
                s[k_leave] = si
        else:
            if enter:
                st = _replace_col(a, pos, j_enter)
                g[pos] = new_sign
            else:
                st = _shrink(a, k_leave, pos)
                s[k_leave] = s[k - 1]
                g[pos] = g[k - 1]
        if st != ST_OK:
            return st
        k = a.k
        if k == 0:
            return ST_EMPTY

        # ---- primal path on the new segment
        for c in range(k):
            a.z[c] = d[a.T[c]]
        _Bv(a, a.z, av)
        _Bv(a, s, bv)
        _vB(a, g, yT)
        for c in range(k):
            yT[c] = -yT[c]
        cand_t = -INFINITY
        cand_kind = 0
        cand_pos = 0
        cand_i = 0
        cand_s = 0.0
        for c in range(k):
            if g[c] * bv[c] > 0:
                th = -av[c] / bv[c]
                if cand_kind == 0 or th > cand_t:
                    cand_t = th
                    cand_kind = 1
                    cand_pos = c
        _sig_times(a, a.S, av, k, qv)
        _sig_times(a, a.S, bv, k, hv)
        for r in range(m):
            inT[r] = 0
        for c in range(k):
            inT[a.T[c]] = 1
        # qv -> alpha = sigma a - d, hv -> beta = sigma b
        th = -INFINITY
        j = -1
        for r in range(m):
            if not inT[r] and hv[r] < 1.0 - 1e-12:
                v = (qv[r] - d[r]) / (1.0 - hv[r])
                if j < 0 or v > th:
                    th = v
                    j = r
        if j >= 0 and th > cand_t:
            cand_t = th
            cand_kind = 2
            cand_i = j
            cand_s = 1.0
        th = -INFINITY
        j = -1
        for r in range(m):
            if not inT[r] and hv[r] > -1.0 + 1e-12:
                v = -(qv[r] - d[r]) / (1.0 + hv[r])
                if j < 0 or v > th:
                    th = v
                    j = r
        if j >= 0 and th > cand_t:
            cand_t = th
            cand_kind = 2
            cand_i = j
            cand_s = -1.0

        if cand_kind == 0 or cand_t <= tau:
            st = _rebuild(a)
            if st != ST_OK:
                return st
            for c in range(k):
                a.z[c] = d[a.T[c]] + tau * s[c]
            _Bv(a, a.z, av)
            _vB(a, g, yT)
            for c in range(k):
                w[a.S[c]] = av[c]
                y[a.T[c]] = -yT[c]
            t_io[0] = tau
            return ST_OK
        t_top = t
        if cand_t < t:
            t = cand_t
        if cand_kind == 1:
            is_join = 0
            pos = cand_pos
        else:
            is_join = 1
            i = cand_i
            si = cand_s
    t_io[0] = t
    steps_out[0] = max_steps
    return ST_MAX_STEPS


def homotopy_path(double[::1, :] sigma, const double[::1] d, double tau,
                  int max_steps, double relax_factor, double[::1] w, double[::1] y,
                  double pivot_rtol, double ray_rtol, int refresh=50):
    cdef int m = <int>d.shape[0], lwork, status, steps = 0, relaxed = 0, r
    cdef double t
    cdef _Act a
    cdef Py_ssize_t i0 = 0
    w[:] = 0.0
    y[:] = 0.0
    for r in range(1, m):
        if fabs(d[r]) > fabs(d[i0]):
            i0 = r
    t = fabs(d[i0]) if m else 0.0
    if tau >= t:
        return ST_OK, 0, t, None, False
    big = max(1.0, float(np.max(np.abs(sigma))))
    lwork = 64 * m
    cdef double[::1, :] buf = np.zeros((m, m), order="F")
    cdef double[::1, :] Am = np.zeros((m, m), order="F")
    cdef double[::1] Cm = np.zeros(m)
    cdef double[::1] workv = np.zeros(lwork)
    cdef int[::1] ipiv = np.zeros(m, dtype=np.intc)
    cdef Py_ssize_t[::1] T = np.zeros(m, dtype=np.intp)
    cdef Py_ssize_t[::1] S = np.zeros(m, dtype=np.intp)
    cdef Py_ssize_t[::1] Tn = np.zeros(m + 1, dtype=np.intp)
    cdef double[:, ::1] vecs = np.zeros((14, m + 1))
    cdef signed char[::1] flags = np.zeros(2 * m, dtype=np.int8)
    a.sig = &sigma[0, 0]
    a.buf = &buf[0, 0]
    a.A = &Am[0, 0]
    a.C = &Cm[0]
    a.work = &workv[0]
    a.ipiv = &ipiv[0]
    a.T = &T[0]
    a.S = &S[0]
    a.x = &vecs[0, 0]
    a.z = &vecs[1, 0]
    a.m = m
    a.k = 0
    a.lwork = lwork
    a.refresh = refresh
    a.updates = 0
    a.tiny = 1e-12 * big
    with nogil:
        status = _path(&a, &d[0], tau, max_steps, relax_factor, &w[0], &y[0],
                       pivot_rtol, ray_rtol,
                       &vecs[2, 0], &vecs[3, 0], &vecs[4, 0], &vecs[5, 0], &vecs[6, 0],
                       &vecs[7, 0], &vecs[8, 0], &vecs[9, 0], &vecs[10, 0], &Tn[0],
                       &vecs[11, 0], &flags[0], &flags[m], &steps, &t, &relaxed)
    if status < 0:
        ray = np.zeros(m)
        for r in range(steps):
            ray[Tn[r]] = vecs[7, r]
        return ST_RAY, -status, t, ray, bool(relaxed)
    return status, steps, t, None, False
