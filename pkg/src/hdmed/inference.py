"""Debiased estimators of the indirect effect and their Wald inference.

Two estimators share the same recipe: a scaled-lasso pilot fit of the
outcome regression, a row-wise constrained l1 debiasing matrix, a one-step
bias correction, and a plug-in covariance.

``fit_incomplete`` allows a direct effect of the exposure on the outcome and
returns the indirect effect ``b_hat`` together with the direct effect
``a_hat``. ``fit_complete`` assumes there is no direct effect, which buys a
smaller variance.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .data import Dataset, moments, ols, partial_out, prepare, residualize
from .errors import DataError, NumericalError
from .l1_solver import default_tau, estimate_omega_C, estimate_omega_I
from .scaled_lasso import penalty_level, scaled_lasso

FORM_RTOL = 1e-8


@dataclass
class InferenceConfig:
    """Tuning for the debiased estimators.

    Attributes
    ----------
    tau : float, optional
        Constraint level of the debiasing matrix. ``None`` uses
        ``sqrt(log(p) / n) / 3``.
    lambda_scheme : {'quantile', 'universal'}
        Rule for the scaled-lasso base penalty when ``lambda0`` is None.
    lambda0 : float, optional
        Explicit scaled-lasso base penalty.
    level : float
        Confidence level of the reported intervals.
    penalize_direct : bool
        Penalize the exposure (and covariate) coefficients in the pilot fit.
        Leaving them unpenalized has no inference guarantee.
    solver : str
        Row solver passed to :func:`hdmed.l1_solver.solve_row`.
    n_jobs : int
        Worker threads for the row solves.
    on_infeasible : {'error', 'relax'}
        What to do when a debiasing row has no feasible point at ``tau``:
        raise, or raise ``tau`` for that row just past its smallest feasible
        value and record a warning.
    """

    tau: float | None = None
    lambda_scheme: str = "quantile"
    lambda0: float | None = None
    level: float = 0.95
    penalize_direct: bool = True
    solver: str = "auto"
    n_jobs: int = 1
    on_infeasible: str = "error"

    def validate(self):
        if not 0 < self.level < 1:
            raise DataError(f"level must lie in (0, 1), got {self.level}")
        if self.tau is not None and not self.tau >= 0:
            raise DataError(f"tau must be non-negative, got {self.tau}")
        if self.lambda0 is not None and not self.lambda0 >= 0:
            raise DataError(f"lambda0 must be non-negative, got {self.lambda0}")
        if self.lambda_scheme not in {"quantile", "universal"}:
            raise DataError(f"unknown lambda scheme {self.lambda_scheme!r}")
        if self.on_infeasible not in {"error", "relax"}:
            raise DataError(f"unknown on_infeasible policy {self.on_infeasible!r}")
        return self


@dataclass
class NoiseEstimates:
    """Residual variances: given (G, S), net mediator part, and given S alone."""

    sigma1_sq: float
    sigma2_sq: float
    sigma_total_sq: float
    truncated: bool = False


@dataclass
class WaldResult:
    z: np.ndarray
    p: np.ndarray
    ci: np.ndarray
    degenerate: np.ndarray


@dataclass
class MediationEstimate:
    """Point estimates, plug-in covariance and Wald inference.

    ``cov`` is the covariance of the stacked vector ``(b_hat, a_hat)`` in
    incomplete mode and of ``b_hat`` in complete mode, already divided by
    ``n``. ``wald_z``, ``p_values``, ``se`` and ``ci`` follow the same
    stacking.
    """

    mode: str
    b_hat: np.ndarray
    a_hat: np.ndarray | None
    cov: np.ndarray
    wald_z: np.ndarray
    p_values: np.ndarray
    ci: np.ndarray
    level: float
    alpha_tilde: np.ndarray
    noise: NoiseEstimates
    tau: float
    lambda0: float
    omega: object = None
    form_gap: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def se(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    @property
    def estimate(self):
        if self.a_hat is None:
            return self.b_hat
        return np.concatenate([self.b_hat, self.a_hat])

    def to_dict(self):
        q = self.b_hat.size
        out = {
            "mode": self.mode,
            "indirect": _component_dict(self, slice(0, q)),
            "cov": self.cov.tolist(),
            "level": self.level,
            "tau": self.tau,
            "lambda0": self.lambda0,
            "sigma1_sq": self.noise.sigma1_sq,
            "sigma2_sq": self.noise.sigma2_sq,
            "sigma_total_sq": self.noise.sigma_total_sq,
            "alpha_tilde": self.alpha_tilde.tolist(),
            "form_gap": self.form_gap,
            "warnings": list(self.warnings),
        }
        if self.a_hat is not None:
            out["direct"] = _component_dict(self, slice(q, 2 * q))
        if self.omega is not None:
            out["solver"] = self.omega.diagnostics()
        return out


def _component_dict(est, sl):
    return {
        "estimate": est.estimate[sl].tolist(),
        "se": est.se[sl].tolist(),
        "z": est.wald_z[sl].tolist(),
        "p_value": est.p_values[sl].tolist(),
        "ci_lower": est.ci[sl, 0].tolist(),
        "ci_upper": est.ci[sl, 1].tolist(),
    }


# --------------------------------------------------------------------------
# Wald inference


def wald(estimate, cov, level=0.95):
    """Per-component Wald statistics, two-sided p-values and intervals.

    Parameters
    ----------
    estimate : array, shape (k,)
    cov : array, shape (k, k)
        Covariance of ``estimate``; only the diagonal is used.
    level : float
        Confidence level in (0, 1).

    Returns
    -------
    WaldResult
        A component with zero variance gets ``p = 0`` (``p = 1`` if its
        estimate is also zero) and is marked ``degenerate``.
    """
    est = np.atleast_1d(np.asarray(estimate, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not 0 < level < 1:
        raise DataError(f"level must lie in (0, 1), got {level}")
    var = np.diag(cov).copy()
    if var.shape != est.shape:
        raise DataError("estimate and covariance dimensions differ")
    if np.any(var < 0):
        raise NumericalError(f"negative variance on the covariance diagonal: {var.min():.3g}")
    se = np.sqrt(var)
    degenerate = se == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(degenerate, np.where(est == 0, 0.0, np.sign(est) * np.inf), est / se)
    p = 2.0 * norm.sf(np.abs(z))
    p = np.where(degenerate, np.where(est == 0, 1.0, 0.0), p)
    crit = norm.isf((1.0 - level) / 2.0)
    ci = np.column_stack([est - crit * se, est + crit * se])
    return WaldResult(z=z, p=p, ci=ci, degenerate=degenerate)


# --------------------------------------------------------------------------
# noise levels


def estimate_noise(data: Dataset, fit) -> NoiseEstimates:
    """Plug-in residual variances from a pilot fit on ``(G, S)``.

    ``sigma1_sq`` is the squared scaled-lasso noise level, ``sigma_total_sq``
    the residual variance ``RSS / n`` of ``Y`` on ``S`` and ``sigma2_sq``
    their difference truncated at zero.
    """
    if not data.centered:
        data = prepare(data)
    _, total = ols(data.S, data.Y)
    s1 = float(fit.sigma_hat) ** 2
    s2 = total - s1
    return NoiseEstimates(sigma1_sq=s1, sigma2_sq=max(s2, 0.0), sigma_total_sq=total,
                          truncated=s2 < 0)


# --------------------------------------------------------------------------
# estimators


def _ready(data: Dataset) -> Dataset:
    data.validate()
    return data if data.centered else prepare(data)


def _abs_product(*mats):
    """``|A1| |A2| ... |Ak|``: the scale of rounding in the product ``A1 ... Ak``."""
    out = np.abs(mats[-1])
    for M in reversed(mats[:-1]):
        out = np.abs(M) @ out
    return out


def _moment_scale(X, y, coef):
    """``|X|'(|y| + |X| |coef|) / n``, the rounding scale of ``X'(y - X coef) / n``."""
    aX = np.abs(X)
    return aX.T @ (np.abs(y) + aX @ np.abs(coef)) / X.shape[0]


def _check_forms(a, b, what, *terms):
    """Relative agreement of the two algebraic forms of an estimator.

    The gap is measured against the largest magnitude among the two results
    and the ``terms`` that enter them (including absolute-value products of
    the factors), the scale at which rounding enters.
    """
    scale = max(float(np.max(np.abs(t))) for t in (a, b, *terms))
    if scale == 0.0:
        return 0.0
    gap = float(np.max(np.abs(a - b))) / scale
    if gap > FORM_RTOL:
        raise NumericalError(
            f"{what}: debiasing and residual forms disagree (relative gap {gap:.3g})"
        )
    return gap


def _lambda0(cfg, n, m):
    if cfg.lambda0 is not None:
        return float(cfg.lambda0)
    return penalty_level(n, m, cfg.lambda_scheme)


def _null_warning(alpha0, sigma_sg, tau):
    # both the pilot mediator coefficients and the exposure-mediator
    # association look null: the Wald test is conservative here
    if not np.any(alpha0) and float(np.max(np.abs(sigma_sg))) <= tau:
        return {
            "code": "conservative_null",
            "message": "pilot mediator coefficients are all zero and the "
                       "exposure-mediator covariances are within tau of zero; "
                       "the Wald test is conservative in this regime",
        }
    return None


def _truncation_warning(noise):
    if noise.truncated:
        return {
            "code": "sigma2_truncated",
            "message": "sigma1^2 exceeded the total residual variance; "
                       "sigma2^2 set to 0",
            "sigma1_sq": noise.sigma1_sq,
            "sigma_total_sq": noise.sigma_total_sq,
        }
    return None


def _relax_warning(om):
    rows = om.relaxed_rows
    if rows:
        return {"code": "tau_relaxed",
                "message": "debiasing rows infeasible at tau were solved at a larger level",
                "rows": rows, "row_taus": om.row_taus[rows].tolist()}
    return None


def _pilot_warnings(fit):
    if fit.degenerate:
        return {"code": "degenerate_pilot",
                "message": "pilot fit is degenerate (noise estimate at its floor)"}
    return None


def fit_incomplete(data: Dataset, cfg: InferenceConfig | None = None) -> MediationEstimate:
    """Debiased indirect and direct effects allowing a direct effect.

    With covariates ``Z`` the exposure block is augmented to ``(S, Z)`` and
    only the leading ``q`` components are reported.
    """
    cfg = (cfg or InferenceConfig()).validate()
    data = _ready(data)
    q_report = data.q
    data = partial_out(data)
    mom = moments(data)
    n, p, q = mom.n, mom.p, mom.q
    X = np.hstack([data.G, data.S])

    lam0 = _lambda0(cfg, n, p + q)
    pf = np.ones(p + q)
    if not cfg.penalize_direct:
        pf[p:] = 0.0
    fit = scaled_lasso(X, data.Y, lam0, penalty_factor=pf)
    alpha = fit.coef
    alpha0, alpha1 = alpha[:p], alpha[p:]
    noise = estimate_noise(data, fit)

    tau = default_tau(n, p) if cfg.tau is None else float(cfg.tau)
    om = estimate_omega_I(mom, tau, method=cfg.solver, n_jobs=cfg.n_jobs,
                          on_infeasible=cfg.on_infeasible)
    omega = om.omega

    ss_inv = mom.sigma_ss_inv()
    block_inv = np.kron(np.eye(2), ss_inv)

    # debiasing form
    inner = omega @ mom.sigma_xy - (omega @ mom.sigma_xx - mom.d_hat) @ alpha
    est_debias = block_inv @ inner
    # residual form
    resid = data.Y - X @ alpha
    pilot = np.concatenate([ss_inv @ (mom.sigma_sg @ alpha0), alpha1])
    correction = block_inv @ (omega @ (X.T @ resid) / n)
    est_resid = pilot + correction
    gap = _check_forms(est_debias, est_resid, "incomplete-mediation estimator",
                       pilot, correction, block_inv @ (omega @ mom.sigma_xy),
                       _abs_product(block_inv, omega, _moment_scale(X, data.Y, alpha)),
                       _abs_product(block_inv, mom.d_hat, alpha))

    middle = omega @ mom.sigma_xx @ omega.T
    V = noise.sigma1_sq * block_inv @ middle @ block_inv.T
    V[:q, :q] += noise.sigma2_sq * ss_inv
    cov_full = 0.5 * (V + V.T) / n

    keep = np.r_[0:q_report, q:q + q_report]
    est = est_resid[keep]
    cov = cov_full[np.ix_(keep, keep)]
    w = wald(est, cov, cfg.level)
    warns = [x for x in (
        _null_warning(alpha0, mom.sigma_sg[:q_report], tau),
        _truncation_warning(noise),
        _pilot_warnings(fit),
        _relax_warning(om),
    ) if x]
    if np.any(w.degenerate):
        warns.append({"code": "zero_variance",
                      "message": "a component has zero plug-in variance",
                      "components": np.flatnonzero(w.degenerate).tolist()})
    return MediationEstimate(
        mode="incomplete",
        b_hat=est[:q_report],
        a_hat=est[q_report:],
        cov=cov,
        wald_z=w.z,
        p_values=w.p,
        ci=w.ci,
        level=cfg.level,
        alpha_tilde=alpha,
        noise=noise,
        tau=tau,
        lambda0=lam0,
        omega=om,
        form_gap=gap,
        warnings=warns,
    )


def fit_complete(data: Dataset, cfg: InferenceConfig | None = None) -> MediationEstimate:
    """Debiased indirect effect assuming no direct effect.

    The pilot is the scaled lasso of ``Y`` on ``G`` alone. Covariates, if
    present, are projected out of every block first.
    """
    cfg = (cfg or InferenceConfig()).validate()
    data = _ready(data)
    data = residualize(data)
    mom = moments(data)
    n, p, q = mom.n, mom.p, mom.q
    G = data.G

    lam0 = _lambda0(cfg, n, p)
    fit = scaled_lasso(G, data.Y, lam0)
    alpha0 = fit.coef
    noise = estimate_noise(data, fit)

    tau = default_tau(n, p) if cfg.tau is None else float(cfg.tau)
    om = estimate_omega_C(mom, tau, method=cfg.solver, n_jobs=cfg.n_jobs,
                          on_infeasible=cfg.on_infeasible)
    omega = om.omega
    ss_inv = mom.sigma_ss_inv()

    est_debias = ss_inv @ (omega @ mom.sigma_gy - (omega @ mom.sigma_gg - mom.sigma_sg) @ alpha0)
    resid = data.Y - G @ alpha0
    pilot = ss_inv @ (mom.sigma_sg @ alpha0)
    correction = ss_inv @ (omega @ (G.T @ resid) / n)
    est_resid = pilot + correction
    gap = _check_forms(est_debias, est_resid, "complete-mediation estimator",
                       pilot, correction, ss_inv @ (omega @ mom.sigma_gy),
                       _abs_product(ss_inv, omega, _moment_scale(G, data.Y, alpha0)),
                       _abs_product(ss_inv, mom.sigma_sg, alpha0))

    V = noise.sigma1_sq * ss_inv @ (omega @ mom.sigma_gg @ omega.T) @ ss_inv + noise.sigma2_sq * ss_inv
    cov = 0.5 * (V + V.T) / n
    w = wald(est_resid, cov, cfg.level)
    warns = [x for x in (
        _null_warning(alpha0, mom.sigma_sg, tau),
        _truncation_warning(noise),
        _pilot_warnings(fit),
        _relax_warning(om),
    ) if x]
    if np.any(w.degenerate):
        warns.append({"code": "zero_variance",
                      "message": "a component has zero plug-in variance",
                      "components": np.flatnonzero(w.degenerate).tolist()})
    return MediationEstimate(
        mode="complete",
        b_hat=est_resid,
        a_hat=None,
        cov=cov,
        wald_z=w.z,
        p_values=w.p,
        ci=w.ci,
        level=cfg.level,
        alpha_tilde=alpha0,
        noise=noise,
        tau=tau,
        lambda0=lam0,
        omega=om,
        form_gap=gap,
        warnings=warns,
    )


def direct_effect_alt(data: Dataset, inc: MediationEstimate) -> np.ndarray:
    """Direct effect as the OLS total effect minus the debiased indirect effect."""
    if inc.mode != "incomplete":
        raise DataError("direct_effect_alt needs an incomplete-mediation fit")
    data = _ready(data)
    if data.Z is not None:
        data = residualize(data)
    theta, _ = ols(data.S, data.Y)
    return theta[: inc.b_hat.size] - inc.b_hat
