"""Levenberg-Marquardt maximization of a zero-mean Gaussian covariance likelihood.

The objective for a parametric covariance ``R(theta)`` and a measured
covariance ``S`` is

    L(theta) = -ln det R(theta) - tr(R(theta)^-1 S)

Curvature comes from the Fisher information
``F_ij = Re tr(R^-1 dR_i R^-1 dR_j)``, so every step is a damped Fisher
scoring step. A step is accepted only if it does not decrease ``L``.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl

from .errors import NumericalError

log = logging.getLogger(__name__)


class CovarianceModel:
    """Interface used by ``maximize_likelihood``.

    Subclasses implement ``covariance`` and ``derivatives``; ``project``
    maps a raw parameter vector back into its canonical domain and
    ``jitter`` gives the diagonal loading used if ``R`` is singular.
    """

    def covariance(self, theta):
        raise NotImplementedError

    def derivatives(self, theta):
        """Return ``(R, [dR/dtheta_i])``."""
        raise NotImplementedError

    def project(self, theta):
        return theta

    def jitter(self, theta):
        return 1e-12


def _cholesky(R, jitter):
    try:
        return sl.cho_factor(R, lower=True, check_finite=True), False
    except (np.linalg.LinAlgError, ValueError):
        pass
    try:
        loaded = R + jitter * np.eye(R.shape[0])
        return sl.cho_factor(loaded, lower=True, check_finite=True), True
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(
            f"model covariance is singular even after jitter {jitter:.3e}: {exc}"
        ) from exc


def gaussian_loglik(R, S, jitter=1e-12):
    """``-ln det R - tr(R^-1 S)``. Returns ``(value, jitter_used)``."""
    cho, jittered = _cholesky(R, jitter)
    logdet = 2.0 * np.sum(np.log(np.abs(np.diag(cho[0]))))
    tr = np.trace(sl.cho_solve(cho, S)).real
    return float(-logdet - tr), jittered


def gradient_and_fisher(R, dRs, S, jitter=1e-12):
    """Gradient of the log-likelihood and Fisher information for ``dR`` matrices."""
    cho, _ = _cholesky(R, jitter)
    P = sl.cho_solve(cho, np.eye(R.shape[0], dtype=R.dtype))
    B = P @ S
    A = [P @ d for d in dRs]
    n = len(dRs)
    grad = np.empty(n)
    fisher = np.empty((n, n))
    for i in range(n):
        # tr(P dR P S) - tr(P dR)
        grad[i] = (np.einsum("ij,ji->", A[i], B) - np.trace(A[i])).real
        for j in range(i + 1):
            fisher[i, j] = fisher[j, i] = np.einsum("ij,ji->", A[i], A[j]).real
    return grad, fisher


@dataclass
class LMResult:
    theta: np.ndarray
    loglik: float
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    jittered: bool = False


def _safe_loglik(model, theta, S):
    try:
        R = model.covariance(theta)
    except (FloatingPointError, ValueError, OverflowError):
        return -np.inf, False
    if not np.all(np.isfinite(R)):
        return -np.inf, False
    try:
        return gaussian_loglik(R, S, model.jitter(theta))
    except NumericalError:
        return -np.inf, False


def maximize_likelihood(model, S, theta0, max_iter=100, tol=1e-6, damping=1e-2,
                        max_rejections=12, callback=None):
    """Damped Fisher-scoring ascent on the Gaussian covariance likelihood.

    Damping is deflated by 10 after an accepted step and inflated by 10
    after a rejected one. Stops when the relative likelihood change falls
    below ``tol``, when no ascent step can be found, or after ``max_iter``
    accepted iterations. ``trace`` holds the likelihood after each
    accepted step, starting with the initial value, and never decreases.
    """
    theta = model.project(np.asarray(theta0, dtype=float).copy())
    L, jittered = _safe_loglik(model, theta, S)
    if not np.isfinite(L):
        R = model.covariance(theta)
        L, jittered = gaussian_loglik(R, S, model.jitter(theta))
    result = LMResult(theta, L, [L], 0, False, jittered)
    lam = damping
    for it in range(max_iter):
        R, dRs = model.derivatives(theta)
        grad, fisher = gradient_and_fisher(R, dRs, S, model.jitter(theta))
        diag = np.diag(fisher).copy()
        floor = 1e-12 * max(diag.max(), 1e-300)
        accepted = False
        for _ in range(max_rejections):
            lhs = fisher + lam * np.diag(np.maximum(diag, floor))
            try:
                step = np.linalg.solve(lhs, grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(lhs, grad, rcond=None)[0]
            cand = model.project(theta + step)
            L_new, jit = _safe_loglik(model, cand, S)
            if L_new >= L:
                accepted = True
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if not accepted:
            result.converged = True
            log.debug("LM: no ascent step found at iteration %d", it)
            break
        change = (L_new - L) / max(abs(L), 1e-300)
        theta, L = cand, L_new
        result.jittered |= jit
        result.trace.append(L)
        result.iterations = it + 1
        if callback is not None:
            callback(it + 1, theta, L)
        if change < tol:
            result.converged = True
            break
    result.theta = theta
    result.loglik = L
    return result
