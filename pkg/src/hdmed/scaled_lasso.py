"""Lasso by coordinate descent and the scaled lasso.

The scaled lasso jointly estimates a sparse coefficient vector and the
noise level by minimizing

    L(beta, sigma) = ||y - X beta||^2 / (2 n sigma) + sigma / 2 + lambda0 ||beta||_1

which alternates a lasso step at penalty ``lambda0 * sigma`` with the
closed-form update ``sigma = ||y - X beta|| / sqrt(n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import kernels
from .errors import ConvergenceError, DataError

KKT_TOL = 1e-7
SIGMA_TOL = 1e-6
MAX_OUTER = 100
MAX_ITER = 10000


def kkt_violation(X, y, beta, lam):
    """Largest lasso KKT violation of ``beta`` at per-coordinate penalties ``lam``.

    Uses the ``(1/2n)`` loss scaling; ``lam`` may be a scalar or a vector.
    """
    n = X.shape[0]
    lam = np.broadcast_to(np.asarray(lam, dtype=float), beta.shape)
    grad = X.T @ (y - X @ beta) / n
    nz = beta != 0
    viol = np.where(
        nz,
        np.abs(grad - lam * np.sign(beta)),
        np.maximum(np.abs(grad) - lam, 0.0),
    )
    return float(viol.max()) if viol.size else 0.0


def lasso_cd(X, y, lam, penalty_factor=None, beta_init=None,
             kkt_tol=KKT_TOL, max_iter=MAX_ITER):
    """Solve ``min (1/2n)||y - X b||^2 + lam * sum_j w_j |b_j|``.

    Cyclic coordinate descent with active-set passes: a full sweep picks up
    new coordinates, then repeated sweeps over the current support run until
    the steps are small, and the loop ends once the full KKT conditions hold
    to ``kkt_tol``.

    Parameters
    ----------
    X : array, shape (n, m)
        Design, ideally column-standardized.
    y : array, shape (n,)
    lam : float
        Penalty level, ``>= 0``.
    penalty_factor : array, shape (m,), optional
        Per-coordinate multipliers ``w_j`` (0 leaves a coordinate unpenalized).
    beta_init : array, optional
        Warm start.

    Returns
    -------
    beta : array, shape (m,)

    Raises
    ------
    ConvergenceError
        If the KKT conditions are not met within ``max_iter`` sweeps.
    """
    if lam < 0:
        raise DataError(f"lam must be non-negative, got {lam}")
    X = np.asfortranarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n, m = X.shape
    pf = np.ones(m) if penalty_factor is None else np.asarray(penalty_factor, float)
    lam_vec = np.ascontiguousarray(lam * pf)
    colsq = np.ascontiguousarray((X * X).sum(axis=0) / n)
    beta = np.zeros(m) if beta_init is None else np.array(beta_init, dtype=float)
    beta[colsq <= 0] = 0.0
    r = y - X @ beta
    everything = np.arange(m, dtype=np.intp)
    inner_tol = 0.1 * kkt_tol
    sweeps = 0
    while sweeps < max_iter:
        kernels.cd_sweep(X, r, beta, colsq, lam_vec, everything, n)
        sweeps += 1
        active = np.flatnonzero(beta).astype(np.intp)
        while sweeps < max_iter and active.size:
            step = kernels.cd_sweep(X, r, beta, colsq, lam_vec, active, n)
            sweeps += 1
            if step < inner_tol:
                break
        # refresh the residual to shed accumulated rounding
        r = y - X @ beta
        if kkt_violation(X, y, beta, lam_vec) <= kkt_tol:
            return beta
    raise ConvergenceError(
        f"lasso coordinate descent did not reach KKT tolerance {kkt_tol:g} "
        f"in {max_iter} sweeps"
    )


def penalty_level(n, m, scheme="quantile"):
    """Base penalty ``lambda0`` for the scaled lasso (per unit of sigma).

    ``universal`` returns ``sqrt(2 log(m) / n)``. ``quantile`` returns
    ``sqrt(2/n) * L`` where ``L = Phi^{-1}(1 - k/m)`` and ``k`` solves
    ``k = L^4 + 2 L^2``; the root is found by bisection.
    """
    if n < 2 or m < 1:
        raise DataError(f"penalty_level needs n >= 2 and m >= 1, got n={n}, m={m}")
    if scheme == "universal":
        return float(np.sqrt(2.0 * np.log(m) / n))
    if scheme == "quantile":
        k = quantile_k(m)
        return float(np.sqrt(2.0 / n) * norm.isf(k / m))
    raise ValueError(f"unknown penalty scheme {scheme!r}")


def _quantile_gap(k, m):
    L = norm.isf(k / m)
    return k - (L**4 + 2.0 * L**2)


def quantile_k(m, tol=1e-13, max_iter=200):
    """Root of ``k = L^4 + 2 L^2`` with ``L = Phi^{-1}(1 - k/m)`` on ``(0, m/2]``.

    The right-hand side decreases in ``k`` while the left increases, so the
    root is unique; at ``k = m/2`` the gap is ``m/2 > 0``.
    """
    lo, hi = 0.0, m / 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= 0.0:
            break
        if _quantile_gap(mid, m) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


@dataclass
class ScaledLassoFit:
    """Result of :func:`scaled_lasso` (coefficients on the original scale)."""

    coef: np.ndarray
    sigma_hat: float
    lambda0: float
    iterations: int
    converged: bool
    degenerate: bool = False
    objective_history: list = field(default_factory=list)
    sigma_floor: float = 0.0

    @property
    def support(self):
        return np.flatnonzero(self.coef)


def scaled_lasso_objective(X, y, beta, sigma, lambda0, penalty_factor=None):
    """Evaluate ``L(beta, sigma)`` (penalty applied to ``beta`` as given)."""
    n = X.shape[0]
    r = y - X @ beta
    pf = 1.0 if penalty_factor is None else np.asarray(penalty_factor, float)
    return float(r @ r / (2 * n * sigma) + sigma / 2 + lambda0 * np.sum(pf * np.abs(beta)))


def _secant(passes, floor, max_stretch=1000.0):
    """Secant root of ``sigma_out(sigma) - sigma`` through the last two passes.

    Returned only when it extrapolates past the plain update in the same
    direction (the plain iteration is converging slowly and monotonically);
    otherwise ``None``.
    """
    if len(passes) < 2:
        return None
    (s0, g0), (s1, g1) = passes[-2], passes[-1]
    if g1 == 0 or g0 == g1 or g0 * g1 < 0:
        return None
    step = -g1 * (s1 - s0) / (g1 - g0)
    if not (step * g1 > 0 and abs(g1) < abs(step) <= max_stretch * abs(g1)):
        return None
    trial = s1 + step
    return trial if trial > floor else None


def scaled_lasso(X, y, lambda0, penalty_factor=None, standardize=True,
                 sigma_tol=SIGMA_TOL, max_outer=MAX_OUTER,
                 kkt_tol=KKT_TOL, max_iter=MAX_ITER):
    """Fit the scaled lasso of ``y`` on centered ``X``.

    Columns are scaled to unit variance internally (when ``standardize``)
    and the returned coefficients are mapped back to the original scale.
    The outer loop stops when successive noise estimates differ by at most
    ``sigma_tol`` times the sample standard deviation of ``y`` and the
    coefficients meet the lasso KKT conditions at the final noise level; the
    returned ``sigma_hat`` equals ``||y - X coef|| / sqrt(n)`` exactly
    (unless the floor ``1e-8 * sd(y)`` binds).

    When the plain alternation creeps (many columns, few rows), a secant
    step on ``sigma`` through the last two passes is tried and kept only if
    it lowers the objective, so the objective history stays nonincreasing.

    Raises
    ------
    ConvergenceError
        When the noise estimate has not settled after ``max_outer`` passes.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    if y.shape != (n,):
        raise DataError(f"y has shape {y.shape}, expected ({n},)")
    if lambda0 < 0:
        raise DataError(f"lambda0 must be non-negative, got {lambda0}")
    pf = np.ones(m) if penalty_factor is None else np.asarray(penalty_factor, float)

    y_sd = float(np.std(y))
    scale = y_sd if y_sd > 0 else 1.0
    floor = 1e-8 * scale
    if not np.any(y):
        return ScaledLassoFit(
            coef=np.zeros(m), sigma_hat=floor, lambda0=lambda0, iterations=0,
            converged=True, degenerate=True, sigma_floor=floor,
        )

    if standardize:
        sd = X.std(axis=0)
        sd[sd <= 0] = 1.0
    else:
        sd = np.ones(m)
    Xs = np.asfortranarray(X / sd)

    def one_pass(sigma_in, beta_init):
        b = lasso_cd(Xs, y, lambda0 * sigma_in, pf, beta_init=beta_init,
                     kkt_tol=kkt_tol, max_iter=max_iter)
        s = max(float(np.linalg.norm(y - Xs @ b)) / np.sqrt(n), floor)
        return b, s, scaled_lasso_objective(Xs, y, b, s, lambda0, pf)

    beta = np.zeros(m)
    sigma = max(float(np.linalg.norm(y)) / np.sqrt(n), floor)
    history = [scaled_lasso_objective(Xs, y, beta, sigma, lambda0, pf)]
    passes = []  # (sigma in, sigma out - sigma in) of accepted passes
    for it in range(1, max_outer + 1):
        sigma_in = sigma
        trial = _secant(passes, floor)
        if trial is not None:
            b, s, obj = one_pass(trial, beta)
            if obj <= history[-1]:
                sigma_in, beta, sigma_new = trial, b, s
                history.append(obj)
            else:
                trial = None
        if trial is None:
            beta, sigma_new, obj = one_pass(sigma_in, beta)
            history.append(obj)
        passes.append((sigma_in, sigma_new - sigma_in))
        # settle only once beta is also a lasso solution at the returned sigma
        done = (abs(sigma_new - sigma_in) <= sigma_tol * scale
                and kkt_violation(Xs, y, beta, lambda0 * sigma_new * pf) <= kkt_tol)
        sigma = sigma_new
        if done:
            break
    else:
        raise ConvergenceError(
            f"scaled lasso noise estimate did not settle in {max_outer} iterations"
        )
    return ScaledLassoFit(
        coef=beta / sd,
        sigma_hat=sigma,
        lambda0=lambda0,
        iterations=it,
        converged=True,
        degenerate=sigma <= floor,
        objective_history=history,
        sigma_floor=floor,
    )
