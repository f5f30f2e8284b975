"""Row-wise constrained l1 minimization for the debiasing matrices.

Each row solves

    minimize ||w||_1  subject to  ||sigma @ w - d||_inf <= tau

for a symmetric PSD ``sigma``. Three solvers are available:

``homotopy``
    Parametric simplex on ``tau``: starts from ``w = 0`` at
    ``tau = ||d||_inf`` and follows the piecewise-linear solution path down
    to the requested ``tau``. Each breakpoint costs one small dense solve on
    the active block, so sparse solutions are found quickly and exactly.
``admm``
    Linearized ADMM on the split ``z = sigma @ w - d``, with the iteration
    block running in the compiled kernel. Every ``check_every`` iterations
    the iterate is polished: the apparent support and tight constraints
    define a square system whose solution is tested for optimality.
``highs``
    The HiGHS LP solver from scipy, used as the fallback.

Whichever route produces a point, it is accepted only after a
primal-dual certificate check (feasibility plus a small duality gap);
otherwise the next route is tried.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import kernels
from .errors import ConvergenceError, DataError, InfeasibleError, NumericalError

FEAS_TOL = 1e-7
GAP_TOL = 1e-9
ADMM_TOL = 1e-7
ADMM_MAX_ITER = 20000
# relative size below which a ratio-test pivot counts as zero
PIVOT_RTOL = 1e-7
RAY_RTOL = 1e-10


class _Failed(Exception):
    """Internal: a solver route gave up; try the next one."""


@dataclass
class RowSolution:
    w: np.ndarray
    residual: float
    l1: float
    gap: float
    method: str
    steps: int = 0


@dataclass
class DebiasingMatrix:
    """Stacked row solutions.

    ``omega`` has shape ``(k, m)``; ``row_residuals[i]`` is the achieved
    ``||sigma @ omega[i] - d_i||_inf`` and ``row_l1[i]`` its l1 norm.
    """

    omega: np.ndarray
    tau: float
    row_residuals: np.ndarray
    row_l1: np.ndarray
    row_methods: list
    row_taus: np.ndarray | None = None

    @property
    def relaxed_rows(self):
        if self.row_taus is None:
            return []
        return np.flatnonzero(self.row_taus > self.tau).tolist()

    def diagnostics(self):
        out = {
            "tau": self.tau,
            "row_residuals": self.row_residuals.tolist(),
            "row_l1": self.row_l1.tolist(),
            "row_methods": list(self.row_methods),
        }
        if self.row_taus is not None:
            out["row_taus"] = self.row_taus.tolist()
        return out


# --------------------------------------------------------------------------
# certificates


def certify(sigma, d, tau, w, y):
    """Duality gap of a primal point ``w`` and a dual point ``y``.

    With the Lagrangian ``||w||_1 + y'(sigma w - d - z)``, ``|z| <= tau``,
    any ``y`` with ``||sigma y||_inf <= 1`` gives the lower bound
    ``-y'd - tau ||y||_1``; other ``y`` are rescaled to feasibility first.

    Returns
    -------
    residual : float
        ``||sigma @ w - d||_inf``.
    l1 : float
    gap : float
        ``l1`` minus the dual bound (``inf`` if ``y`` is zero and ``w`` is not).
    """
    residual = float(np.max(np.abs(sigma @ w - d))) if d.size else 0.0
    l1 = float(np.abs(w).sum())
    kappa = float(np.max(np.abs(sigma @ y))) if y.size else 0.0
    scale = max(kappa, 1.0)
    bound = (-(y @ d) - tau * np.abs(y).sum()) / scale
    return residual, l1, l1 - float(bound)


def _accept(sigma, d, tau, w, y, feas_tol, gap_tol, method, steps):
    residual, l1, gap = certify(sigma, d, tau, w, y)
    if residual > tau + feas_tol:
        raise _Failed(f"{method}: residual {residual:.3g} exceeds tau {tau:.3g}")
    if gap > gap_tol * max(1.0, l1):
        raise _Failed(f"{method}: duality gap {gap:.3g}")
    return RowSolution(w=w, residual=residual, l1=l1, gap=gap, method=method, steps=steps)


# --------------------------------------------------------------------------
# homotopy (parametric simplex in tau)


RELAX_FACTOR = 1.001


def _homotopy(sigma, d, tau, max_steps):
    """Run the compiled path kernel and interpret its status.

    Returns ``(w, y, steps)``. An unbounded ratio test becomes an
    :class:`InfeasibleError` (with the relaxed-level point attached as
    ``exc.relaxed`` when the kernel had it); other stops raise ``_Failed``.
    """
    m = d.shape[0]
    w = np.zeros(m)
    y = np.zeros(m)
    sig = np.asfortranarray(sigma)
    status, steps, t, ray, relaxed = kernels.homotopy_path(
        sig, np.ascontiguousarray(d), float(tau), int(max_steps), RELAX_FACTOR,
        w, y, PIVOT_RTOL, RAY_RTOL)
    if status == kernels.HOMOTOPY_OK:
        return w, y, steps
    if status == kernels.HOMOTOPY_RAY:
        big = max(1.0, float(np.max(np.abs(sigma))))
        try:
            _ray_infeasible(sigma, d, tau, ray, t, big)
        except InfeasibleError as exc:
            if relaxed:
                exc.relaxed = (RELAX_FACTOR * t, w, y, steps)
            raise
    raise _Failed(f"homotopy: {kernels.HOMOTOPY_MESSAGES.get(status, status)} "
                  f"after {steps} steps")


def _ray_infeasible(sigma, d, tau, ray, t, big):
    """Turn an unbounded dual ratio test into an infeasibility verdict.

    The direction ``ray`` satisfies ``sigma @ ray = 0``,
    so the dual objective grows without bound along it for every level
    below ``-ray'd / ||ray||_1``. The current point is feasible at level
    ``t``; when the two levels agree, ``t`` is the smallest feasible level.
    """
    nrm = float(np.abs(ray).sum())
    if nrm == 0.0:
        raise _Failed("homotopy: empty dual ray")
    flat = float(np.max(np.abs(sigma @ ray))) <= 10 * RAY_RTOL * big * nrm
    level = -float(ray @ d) / nrm
    if flat and abs(level - t) <= 1e-7 * max(1.0, t) and t > tau:
        raise InfeasibleError(
            f"no w satisfies ||sigma w - d||_inf <= {tau:g} "
            f"(smallest feasible tau is {t:g})",
            min_residual=t,
        )
    raise _Failed("homotopy: dual ray without a consistent certificate")


# --------------------------------------------------------------------------
# linearized ADMM with polishing


def _polish(sigma, d, tau, w, y):
    """Guess the optimal vertex from an approximate primal-dual pair."""
    wmax = float(np.max(np.abs(w)))
    if wmax == 0.0:
        return None
    r = sigma @ w - d
    by_residual = np.argsort(-np.abs(r), kind="stable")
    by_w = np.argsort(-np.abs(w), kind="stable")
    ymax = float(np.max(np.abs(y)))
    by_y = np.argsort(-np.abs(y), kind="stable")
    seen = set()
    for thr in (1e-1, 3e-2, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
        S = np.flatnonzero(np.abs(w) > thr * wmax)
        pairs = [(S, by_residual[: S.size])]
        if ymax > 0:
            pairs.append((S, np.flatnonzero(np.abs(y) > thr * ymax)))
            pairs.append((S, np.sort(by_y[: S.size])))
            T = np.flatnonzero(np.abs(y) > thr * ymax)
            pairs.append((np.sort(by_w[: T.size]), T))
        for S, T in pairs:
            key = (S.tobytes(), T.tobytes())
            if key in seen:
                continue
            seen.add(key)
            if T.size != S.size or S.size == 0:
                continue
            sT = np.sign(r[T])
            sT[sT == 0] = 1.0
            gS = np.sign(w[S])
            A = sigma[np.ix_(T, S)]
            try:
                wS = np.linalg.solve(A, d[T] + tau * sT)
                yT = np.linalg.solve(A.T, -gS)
            except np.linalg.LinAlgError:
                continue
            if np.any(wS * gS < 0) or np.any(yT * sT < 0):
                continue
            wc = np.zeros_like(w)
            wc[S] = wS
            yc = np.zeros_like(w)
            yc[T] = yT
            yield wc, yc


def _admm(sigma, d, tau, feas_tol, gap_tol, max_iter=ADMM_MAX_ITER,
          check_every=25, tol=ADMM_TOL):
    m = d.shape[0]
    sig = np.ascontiguousarray(sigma)
    dd = np.ascontiguousarray(d)
    lip = _spectral_norm(sig) ** 2
    if lip <= 0:
        raise _Failed("admm: zero matrix")
    w = np.zeros(m)
    sw = np.zeros(m)
    z = np.clip(-dd, -tau, tau)
    u = np.zeros(m)
    rho = 1.0
    it = 0
    while it < max_iter:
        n_iter = min(check_every, max_iter - it)
        prim, dual = kernels.admm_block(sig, dd, float(tau), lip, rho, w, z, u, sw, n_iter)
        it += n_iter
        for wc, yc in _polish(sig, dd, tau, w, rho * u) or ():
            try:
                return _accept(sig, dd, tau, wc, yc, feas_tol, gap_tol, "admm", it)
            except _Failed:
                continue
        if prim < tol and dual < tol:
            return _accept(sig, dd, tau, w.copy(), rho * u, feas_tol, gap_tol, "admm", it)
        # residual balancing
        if prim > 10 * dual:
            rho *= 2.0
            u /= 2.0
        elif dual > 10 * prim:
            rho /= 2.0
            u *= 2.0
    raise _Failed(f"admm: no certificate after {max_iter} iterations")


def _spectral_norm(sigma, n_iter=100, rtol=1e-6):
    """Upper estimate of ``||sigma||_2`` by power iteration (symmetric input)."""
    m = sigma.shape[0]
    v = np.ones(m) / np.sqrt(m)
    lam = 0.0
    for _ in range(n_iter):
        wv = sigma @ v
        nrm = float(np.linalg.norm(wv))
        if nrm == 0.0:
            return float(np.max(np.abs(sigma))) * m
        v = wv / nrm
        if abs(nrm - lam) <= rtol * nrm:
            lam = nrm
            break
        lam = nrm
    # the Frobenius bound caps any shortfall of the iteration
    return min(1.01 * lam + 1e-12, float(np.linalg.norm(sigma)))


# --------------------------------------------------------------------------
# HiGHS fallback


def _highs(sigma, d, tau, feas_tol, gap_tol):
    m = d.shape[0]
    A = np.block([[sigma, -sigma], [-sigma, sigma]])
    b = np.concatenate([d + tau, tau - d])
    # interior point (with crossover) detects infeasibility far sooner than
    # dual simplex on rank-deficient sigma, but its verdict is confirmed by
    # the minimal-residual LP before it is trusted
    res = linprog(np.ones(2 * m), A_ub=A, b_ub=b, bounds=(0, None), method="highs-ipm")
    if res.status != 0:
        if res.status == 2:
            floor = min_residual(sigma, d)
            if floor > tau:
                raise InfeasibleError(
                    f"no w satisfies ||sigma w - d||_inf <= {tau:g} "
                    f"(smallest feasible tau is {floor:.6g})",
                    min_residual=floor,
                )
        res = linprog(np.ones(2 * m), A_ub=A, b_ub=b, bounds=(0, None), method="highs-ds")
    if res.status == 2:
        raise InfeasibleError(
            f"no w satisfies ||sigma w - d||_inf <= {tau:g}",
            min_residual=min_residual(sigma, d),
        )
    if res.status != 0:
        raise ConvergenceError(f"HiGHS failed: {res.message}")
    w = res.x[:m] - res.x[m:]
    marg = res.ineqlin.marginals
    y = marg[m:] - marg[:m]
    try:
        return _accept(sigma, d, tau, w, y, feas_tol, max(gap_tol, 1e-8), "highs", res.nit)
    except _Failed as exc:
        raise NumericalError(f"HiGHS solution failed certification: {exc}") from None


def min_residual(sigma, d):
    """Smallest achievable ``||sigma @ w - d||_inf`` (an LP in ``(w, t)``)."""
    m = d.shape[0]
    ones = np.ones((m, 1))
    A = np.block([[sigma, -sigma, -ones], [-sigma, sigma, -ones]])
    b = np.concatenate([d, -d])
    c = np.zeros(2 * m + 1)
    c[-1] = 1.0
    res = linprog(c, A_ub=A, b_ub=b, bounds=(0, None), method="highs")
    return float(res.x[-1]) if res.status == 0 else float("nan")


# --------------------------------------------------------------------------
# public API


def solve_row_info(sigma, d, tau, method="auto", feas_tol=FEAS_TOL, gap_tol=GAP_TOL,
                   max_steps=None):
    """Solve one row problem and return a :class:`RowSolution`."""
    sigma = np.asarray(sigma, dtype=float)
    d = np.asarray(d, dtype=float)
    m = d.shape[0]
    if sigma.shape != (m, m):
        raise DataError(f"sigma has shape {sigma.shape}, expected ({m}, {m})")
    if not tau >= 0:
        raise DataError(f"tau must be non-negative, got {tau}")
    scale = max(1.0, float(np.max(np.abs(sigma))) if m else 1.0)
    if m and float(np.max(np.abs(sigma - sigma.T))) > 1e-10 * scale:
        raise DataError("sigma must be symmetric")
    if max_steps is None:
        max_steps = 20 * m + 100

    if method not in {"auto", "homotopy", "admm", "highs"}:
        raise ValueError(f"unknown method {method!r}")
    routes = {"auto": ["homotopy", "highs"], "homotopy": ["homotopy", "highs"],
              "admm": ["admm", "highs"], "highs": ["highs"]}[method]
    for route in routes:
        if route == "homotopy":
            try:
                w, y, steps = _homotopy(sigma, d, tau, max_steps)
                return _accept(sigma, d, tau, w, y, feas_tol, gap_tol, "homotopy", steps)
            except (_Failed, np.linalg.LinAlgError):
                continue
        elif route == "admm":
            try:
                return _admm(sigma, d, tau, feas_tol, gap_tol)
            except _Failed:
                continue
        else:
            return _highs(sigma, d, tau, feas_tol, gap_tol)
    raise AssertionError("unreachable")


def solve_row(sigma, d, tau, method="auto", **kwargs):
    """Minimize ``||w||_1`` subject to ``||sigma @ w - d||_inf <= tau``.

    Raises
    ------
    InfeasibleError
        No feasible point exists; ``exc.min_residual`` reports the smallest
        ``tau`` that would be feasible.
    """
    return solve_row_info(sigma, d, tau, method=method, **kwargs).w


def solve_rows(sigma, targets, tau, method="auto", n_jobs=1, on_infeasible="error"):
    """Solve one row problem per row of ``targets``; rows run concurrently.

    ``on_infeasible='relax'`` solves an infeasible row at a slightly
    larger level (``RELAX_FACTOR`` times its smallest feasible value); the level
    used for each row is kept in ``row_taus``.
    """
    if on_infeasible not in {"error", "relax"}:
        raise ValueError(f"unknown on_infeasible policy {on_infeasible!r}")
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    sigma = np.asarray(sigma, dtype=float)

    def one(i):
        try:
            try:
                return tau, solve_row_info(sigma, targets[i], tau, method=method)
            except InfeasibleError as exc:
                if on_infeasible != "relax" or not np.isfinite(exc.min_residual):
                    raise
                t = max(tau, RELAX_FACTOR * exc.min_residual)
                relaxed = getattr(exc, "relaxed", None)
                if relaxed is not None and relaxed[0] == t:
                    # the path already passed this level; certify that point
                    _, w, y, steps = relaxed
                    try:
                        return t, _accept(sigma, targets[i], t, w, y, FEAS_TOL,
                                          GAP_TOL, "homotopy", steps)
                    except _Failed:
                        pass
                return t, solve_row_info(sigma, targets[i], t, method=method)
        except (NumericalError, DataError) as exc:
            exc.args = (f"row {i}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise

    idx = range(targets.shape[0])
    if n_jobs > 1 and targets.shape[0] > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            out = list(pool.map(one, idx))
    else:
        out = [one(i) for i in idx]
    sols = [s for _, s in out]
    omega = np.vstack([s.w for s in sols]) if sols else np.zeros((0, sigma.shape[0]))
    return DebiasingMatrix(
        omega=omega,
        tau=float(tau),
        row_residuals=np.array([s.residual for s in sols]),
        row_l1=np.array([s.l1 for s in sols]),
        row_methods=[s.method for s in sols],
        row_taus=np.array([t for t, _ in out], dtype=float),
    )


def estimate_omega_C(mom, tau, method="auto", n_jobs=1, on_infeasible="error"):
    """Rows ``argmin ||w||_1 s.t. ||w' sigma_gg - sigma_sg[i]||_inf <= tau``; shape (q, p)."""
    return solve_rows(mom.sigma_gg, mom.sigma_sg, tau, method=method, n_jobs=n_jobs,
                      on_infeasible=on_infeasible)


def estimate_omega_I(mom, tau, method="auto", n_jobs=1, on_infeasible="error"):
    """Rows of ``d_hat`` against ``sigma_xx``; shape (2q, p + q)."""
    return solve_rows(mom.sigma_xx, mom.d_hat, tau, method=method, n_jobs=n_jobs,
                      on_infeasible=on_infeasible)


def default_tau(n, p):
    """Default tuning ``sqrt(log(p) / n) / 3``."""
    return float(np.sqrt(np.log(p) / n) / 3.0)
