# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled M-step proximal gradient kernel.

Same algorithm and return contract as ``_kernels_py.prox_gradient``. All
matrices are small (p, q of order 10), so products are plain loops; the
Cholesky factorisation and inverse go through LAPACK.
"""
import numpy as np

from libc.math cimport INFINITY, fabs, log, sqrt
from scipy.linalg.cython_lapack cimport dpotrf, dpotri

cdef enum:
    _GRAD = 0
    _OBJ = 1
    _MAXITER = 2
    _LINESEARCH = -1
    _NOT_PD = -2

STATUS_GRAD = _GRAD
STATUS_OBJ = _OBJ
STATUS_MAXITER = _MAXITER
STATUS_LINESEARCH = _LINESEARCH
STATUS_NOT_PD = _NOT_PD


cdef bint _factor(const double[:, :, ::1] lam, double[:, :, ::1] sigma, double[::1] logdet,
                  double[:, ::1] work, int K, int p) noexcept nogil:
    # row-major lower triangle == column-major upper triangle
    cdef char uplo = b'U'
    cdef int info = 0
    cdef int n = p
    cdef int lda = p
    cdef int k, i, j
    cdef double ld, d
    for k in range(K):
        for i in range(p):
            for j in range(p):
                work[i, j] = lam[k, i, j]
        dpotrf(&uplo, &n, &work[0, 0], &lda, &info)
        if info != 0:
            return False
        ld = 0.0
        for i in range(p):
            d = work[i, i]
            if not d > 0.0:
                return False
            ld += log(d)
        logdet[k] = 2.0 * ld
        dpotri(&uplo, &n, &work[0, 0], &lda, &info)
        if info != 0:
            return False
        for i in range(p):
            for j in range(i + 1):
                sigma[k, i, j] = work[i, j]
                sigma[k, j, i] = work[i, j]
    return True


cdef double _objective(const double[:, :, ::1] lam, const double[:, :, ::1] theta,
                       const double[:, :, ::1] syy, const double[:, :, ::1] syx,
                       const double[:, :, ::1] sxx, const double[::1] w,
                       double[:, :, ::1] sigma, double[:, :, ::1] M, double[:, :, ::1] CM,
                       double[::1] logdet, double[:, ::1] work,
                       int K, int p, int q) noexcept nogil:
    cdef int k, i, j, a, b
    cdef double g = 0.0
    cdef double s
    if not _factor(lam, sigma, logdet, work, K, p):
        return INFINITY
    for k in range(K):
        g -= w[k] * logdet[k]
        for i in range(p):
            for j in range(p):
                g += lam[k, i, j] * syy[k, i, j]
        for a in range(q):
            for j in range(p):
                s = 0.0
                for i in range(p):
                    s += theta[k, a, i] * sigma[k, i, j]
                M[k, a, j] = s
        for a in range(q):
            for j in range(p):
                s = 0.0
                for b in range(q):
                    s += sxx[k, a, b] * M[k, b, j]
                CM[k, a, j] = s
        for a in range(q):
            for j in range(p):
                g += theta[k, a, j] * (2.0 * syx[k, j, a] + CM[k, a, j])
    return g


cdef void _gradient(const double[::1] w, const double[:, :, ::1] syy, const double[:, :, ::1] syx,
                    const double[:, :, ::1] sigma, const double[:, :, ::1] M,
                    const double[:, :, ::1] CM, double[:, :, ::1] g_lam, double[:, :, ::1] g_theta,
                    int K, int p, int q) noexcept nogil:
    cdef int k, i, j, a
    cdef double s, t
    for k in range(K):
        for i in range(p):
            for j in range(i + 1):
                s = 0.0
                t = 0.0
                for a in range(q):
                    s += M[k, a, i] * CM[k, a, j]
                    t += M[k, a, j] * CM[k, a, i]
                s = -w[k] * sigma[k, i, j] + syy[k, i, j] - 0.5 * (s + t)
                g_lam[k, i, j] = s
                g_lam[k, j, i] = s
        for a in range(q):
            for j in range(p):
                g_theta[k, a, j] = 2.0 * syx[k, j, a] + 2.0 * CM[k, a, j]


cdef double _penalty(const double[:, :, ::1] lam, const double[:, :, ::1] theta, int K, int p, int q,
                     double l1L, double l2L, double l1T, double l2T) noexcept nogil:
    cdef int k, i, j
    cdef double total = 0.0
    cdef double sq, v
    for i in range(p):
        for j in range(p):
            if i == j:
                continue
            sq = 0.0
            for k in range(K):
                v = lam[k, i, j]
                total += l1L * fabs(v)
                sq += v * v
            total += l2L * sqrt(sq)
    for i in range(q):
        for j in range(p):
            sq = 0.0
            for k in range(K):
                v = theta[k, i, j]
                total += l1T * fabs(v)
                sq += v * v
            total += l2T * sqrt(sq)
    return total


cdef inline double _soft(double x, double t) noexcept nogil:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


cdef void _prox_entry(const double[:, :, ::1] cur, const double[:, :, ::1] grad,
                      double[:, :, ::1] out, int i, int j, int K,
                      double alpha, double thr1, double thr2) noexcept nogil:
    cdef int k
    cdef double nrm = 0.0
    cdef double a, shrink
    for k in range(K):
        a = _soft(cur[k, i, j] - alpha * grad[k, i, j], thr1)
        out[k, i, j] = a
        nrm += a * a
    if thr2 == 0.0:
        return
    nrm = sqrt(nrm)
    shrink = 1.0 - thr2 / nrm if nrm > thr2 else 0.0
    for k in range(K):
        out[k, i, j] *= shrink


cdef void _prox_step(const double[:, :, ::1] lam, const double[:, :, ::1] theta,
                     const double[:, :, ::1] g_lam, const double[:, :, ::1] g_theta,
                     double[:, :, ::1] new_lam, double[:, :, ::1] new_theta,
                     int K, int p, int q, double alpha,
                     double l1L, double l2L, double l1T, double l2T) noexcept nogil:
    cdef int k, i, j
    for i in range(p):
        for k in range(K):
            new_lam[k, i, i] = lam[k, i, i] - alpha * g_lam[k, i, i]
        for j in range(i + 1, p):
            # symmetric inputs give identical (i, j) and (j, i) groups
            _prox_entry(lam, g_lam, new_lam, i, j, K, alpha, alpha * l1L, alpha * l2L)
            for k in range(K):
                new_lam[k, j, i] = new_lam[k, i, j]
    for i in range(q):
        for j in range(p):
            _prox_entry(theta, g_theta, new_theta, i, j, K, alpha, alpha * l1T, alpha * l2T)


def smooth_objective(lam, theta, syy, syx, sxx, w):
    lam = np.ascontiguousarray(lam, dtype=float)
    theta = np.ascontiguousarray(theta, dtype=float)
    cdef int K = lam.shape[0], p = lam.shape[1], q = theta.shape[1]
    sigma = np.empty((K, p, p))
    M = np.empty((K, q, p))
    CM = np.empty((K, q, p))
    return _objective(lam, theta, np.ascontiguousarray(syy, dtype=float),
                      np.ascontiguousarray(syx, dtype=float), np.ascontiguousarray(sxx, dtype=float),
                      np.ascontiguousarray(w, dtype=float), sigma, M, CM, np.empty(K),
                      np.empty((p, p)), K, p, q)


def smooth_gradient(lam, theta, syy, syx, sxx, w):
    lam = np.ascontiguousarray(lam, dtype=float)
    theta = np.ascontiguousarray(theta, dtype=float)
    syy = np.ascontiguousarray(syy, dtype=float)
    syx = np.ascontiguousarray(syx, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    cdef int K = lam.shape[0], p = lam.shape[1], q = theta.shape[1]
    sigma = np.empty((K, p, p))
    M = np.empty((K, q, p))
    CM = np.empty((K, q, p))
    g = _objective(lam, theta, syy, syx, np.ascontiguousarray(sxx, dtype=float), w,
                   sigma, M, CM, np.empty(K), np.empty((p, p)), K, p, q)
    if g == INFINITY:
        raise np.linalg.LinAlgError("precision matrix is not positive definite")
    g_lam = np.empty((K, p, p))
    g_theta = np.empty((K, q, p))
    _gradient(w, syy, syx, sigma, M, CM, g_lam, g_theta, K, p, q)
    return g_lam, g_theta


def prox_gradient(lam_in, theta_in, syy_in, syx_in, sxx_in, w_in,
                  double l1L, double l2L, double l1T, double l2T,
                  double alpha0, double beta, int max_iters, double grad_tol, double obj_tol,
                  int max_backtracks):
    """Returns ``(lam, theta, objective_trace, status)``."""
    cdef double[:, :, ::1] lam = np.array(lam_in, dtype=float, order="C")
    cdef double[:, :, ::1] theta = np.array(theta_in, dtype=float, order="C")
    cdef const double[:, :, ::1] syy = np.ascontiguousarray(syy_in, dtype=float)
    cdef const double[:, :, ::1] syx = np.ascontiguousarray(syx_in, dtype=float)
    cdef const double[:, :, ::1] sxx = np.ascontiguousarray(sxx_in, dtype=float)
    cdef const double[::1] w = np.ascontiguousarray(w_in, dtype=float)
    cdef int K = lam.shape[0], p = lam.shape[1], q = theta.shape[1]

    cdef double[:, :, ::1] sigma = np.empty((K, p, p))
    cdef double[:, :, ::1] M = np.empty((K, q, p))
    cdef double[:, :, ::1] CM = np.empty((K, q, p))
    cdef double[:, :, ::1] n_sigma = np.empty((K, p, p))
    cdef double[:, :, ::1] n_M = np.empty((K, q, p))
    cdef double[:, :, ::1] n_CM = np.empty((K, q, p))
    cdef double[:, :, ::1] g_lam = np.empty((K, p, p))
    cdef double[:, :, ::1] g_theta = np.empty((K, q, p))
    cdef double[:, :, ::1] new_lam = np.empty((K, p, p))
    cdef double[:, :, ::1] new_theta = np.empty((K, q, p))
    cdef double[::1] logdet = np.empty(K)
    cdef double[:, ::1] work = np.empty((p, p))
    cdef double[::1] trace = np.empty(max_iters + 1)

    cdef int it, bt, k, i, j, status, n_trace
    cdef double g, f, new_g, new_f, alpha, sq, lin, d, rel, gnorm
    cdef bint accepted

    with nogil:
        g = _objective(lam, theta, syy, syx, sxx, w, sigma, M, CM, logdet, work, K, p, q)
    if g == INFINITY:
        return np.asarray(lam), np.asarray(theta), [INFINITY], _NOT_PD
    f = g + _penalty(lam, theta, K, p, q, l1L, l2L, l1T, l2T)
    trace[0] = f
    n_trace = 1
    status = _MAXITER

    with nogil:
        for it in range(max_iters):
            _gradient(w, syy, syx, sigma, M, CM, g_lam, g_theta, K, p, q)
            alpha = alpha0
            accepted = False
            for bt in range(max_backtracks + 1):
                _prox_step(lam, theta, g_lam, g_theta, new_lam, new_theta, K, p, q, alpha,
                           l1L, l2L, l1T, l2T)
                sq = 0.0
                lin = 0.0
                for k in range(K):
                    for i in range(p):
                        for j in range(p):
                            d = new_lam[k, i, j] - lam[k, i, j]
                            sq += d * d
                            lin += g_lam[k, i, j] * d
                    for i in range(q):
                        for j in range(p):
                            d = new_theta[k, i, j] - theta[k, i, j]
                            sq += d * d
                            lin += g_theta[k, i, j] * d
                new_g = _objective(new_lam, new_theta, syy, syx, sxx, w, n_sigma, n_M, n_CM,
                                   logdet, work, K, p, q)
                if new_g <= g + lin + sq / (2.0 * alpha):
                    accepted = True
                    break
                alpha *= beta
            if not accepted:
                status = _LINESEARCH
                break
            new_f = new_g + _penalty(new_lam, new_theta, K, p, q, l1L, l2L, l1T, l2T)
            if new_f > f:
                # round-off only; keep the monotone iterate
                status = _OBJ
                break
            gnorm = sqrt(sq) / alpha
            lam, new_lam = new_lam, lam
            theta, new_theta = new_theta, theta
            sigma, n_sigma = n_sigma, sigma
            M, n_M = n_M, M
            CM, n_CM = n_CM, CM
            g = new_g
            rel = (f - new_f) / max(fabs(f), 1e-300)
            f = new_f
            trace[n_trace] = f
            n_trace += 1
            if gnorm <= grad_tol:
                status = _GRAD
                break
            if rel <= obj_tol:
                status = _OBJ
                break
    return (np.array(lam), np.array(theta), list(np.asarray(trace)[:n_trace]), status)
