"""Pure numpy implementation of the M-step proximal gradient kernel.

Mirrors ``_kernels.pyx`` step for step; used when the extension is not built
or when ``CGGM_MIX_BACKEND=python``.
"""
import numpy as np

STATUS_GRAD = 0
STATUS_OBJ = 1
STATUS_MAXITER = 2
STATUS_LINESEARCH = -1
STATUS_NOT_PD = -2


def _factor(lam):
    """(logdet stack, sigma stack) or None when some precision is not PD."""
    try:
        L = np.linalg.cholesky(lam)
    except np.linalg.LinAlgError:
        return None
    diag = np.diagonal(L, axis1=1, axis2=2)
    if np.any(diag <= 0) or not np.all(np.isfinite(diag)):
        return None
    logdet = 2.0 * np.log(diag).sum(axis=1)
    Linv = np.linalg.inv(L)
    sigma = np.swapaxes(Linv, 1, 2) @ Linv
    return logdet, sigma


def _objective(lam, theta, syy, syx, sxx, w):
    """(g, sigma, M, CM) with M = theta sigma, CM = sxx M; g = inf if not PD."""
    fac = _factor(lam)
    if fac is None:
        return np.inf, None, None, None
    logdet, sigma = fac
    M = theta @ sigma
    CM = sxx @ M
    g = (-w * logdet).sum()
    g += (lam * syy).sum()
    g += 2.0 * (theta * np.swapaxes(syx, 1, 2)).sum()
    g += (theta * CM).sum()
    return float(g), sigma, M, CM


def _gradient(w, syy, syx, sigma, M, CM):
    g_lam = -w[:, None, None] * sigma + syy - np.swapaxes(M, 1, 2) @ CM
    g_lam = 0.5 * (g_lam + np.swapaxes(g_lam, 1, 2))
    g_theta = 2.0 * np.swapaxes(syx, 1, 2) + 2.0 * CM
    return g_lam, g_theta


def smooth_objective(lam, theta, syy, syx, sxx, w):
    return _objective(lam, theta, syy, syx, sxx, w)[0]


def smooth_gradient(lam, theta, syy, syx, sxx, w):
    g, sigma, M, CM = _objective(lam, theta, syy, syx, sxx, w)
    if sigma is None:
        raise np.linalg.LinAlgError("precision matrix is not positive definite")
    return _gradient(w, syy, syx, sigma, M, CM)


def _group_prox(d, thr1, thr2):
    a = np.sign(d) * np.maximum(np.abs(d) - thr1, 0.0)
    if thr2 == 0.0:
        return a
    norm = np.sqrt((a * a).sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(norm > thr2, 1.0 - thr2 / norm, 0.0)
    return a * shrink


def _penalty(lam, theta, off, l1L, l2L, l1T, l2T):
    lo = lam[:, off]
    return (l1L * np.abs(lo).sum() + l2L * np.sqrt((lo * lo).sum(axis=0)).sum()
            + l1T * np.abs(theta).sum() + l2T * np.sqrt((theta * theta).sum(axis=0)).sum())


def prox_gradient(lam, theta, syy, syx, sxx, w, l1L, l2L, l1T, l2T,
                  alpha0, beta, max_iters, grad_tol, obj_tol, max_backtracks):
    """Returns ``(lam, theta, objective_trace, status)``."""
    lam = np.array(lam, dtype=float)
    theta = np.array(theta, dtype=float)
    p = lam.shape[1]
    off = ~np.eye(p, dtype=bool)
    diag = np.eye(p, dtype=bool)

    g, sigma, M, CM = _objective(lam, theta, syy, syx, sxx, w)
    if not np.isfinite(g):
        return lam, theta, [np.inf], STATUS_NOT_PD
    f = g + _penalty(lam, theta, off, l1L, l2L, l1T, l2T)
    trace = [f]
    status = STATUS_MAXITER

    for _ in range(max_iters):
        g_lam, g_theta = _gradient(w, syy, syx, sigma, M, CM)
        alpha = alpha0
        for _bt in range(max_backtracks + 1):
            d_lam = lam - alpha * g_lam
            new_lam = _group_prox(d_lam, alpha * l1L, alpha * l2L)
            new_lam[:, diag] = d_lam[:, diag]
            new_lam = 0.5 * (new_lam + np.swapaxes(new_lam, 1, 2))
            new_theta = _group_prox(theta - alpha * g_theta, alpha * l1T, alpha * l2T)
            step_lam = new_lam - lam
            step_theta = new_theta - theta
            new_g, n_sigma, n_M, n_CM = _objective(new_lam, new_theta, syy, syx, sxx, w)
            sq = (step_lam * step_lam).sum() + (step_theta * step_theta).sum()
            lin = (g_lam * step_lam).sum() + (g_theta * step_theta).sum()
            if new_g <= g + lin + sq / (2.0 * alpha):
                break
            alpha *= beta
        else:
            return lam, theta, trace, STATUS_LINESEARCH

        new_f = new_g + _penalty(new_lam, new_theta, off, l1L, l2L, l1T, l2T)
        if new_f > f:
            # round-off only; keep the monotone iterate
            status = STATUS_OBJ
            break
        gnorm = np.sqrt(sq) / alpha
        lam, theta = new_lam, new_theta
        g, sigma, M, CM = new_g, n_sigma, n_M, n_CM
        rel = (f - new_f) / max(abs(f), 1e-300)
        f = new_f
        trace.append(f)
        if gnorm <= grad_tol:
            status = STATUS_GRAD
            break
        if rel <= obj_tol:
            status = STATUS_OBJ
            break
    return lam, theta, trace, status
