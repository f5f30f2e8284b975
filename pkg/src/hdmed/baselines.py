"""Comparator estimators: OLS total effect and the naive lasso product.

The naive estimator plugs a plain lasso fit of the outcome regression into
``sigma_ss^{-1} sigma_sg alpha0`` without any bias correction, so it has no
tractable sampling distribution; its intervals come from a pairs bootstrap
and carry no coverage guarantee.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, moments, ols, partial_out, prepare, residualize
from .errors import DataError, NumericalError, SingularMatrixError
from .inference import wald
from .scaled_lasso import lasso_cd, penalty_level, scaled_lasso

MAX_SKIP_FRACTION = 0.10


@dataclass
class BaselineEstimate:
    """Point estimate and interval of a comparator method.

    ``variance`` is only set for OLS. ``p_value`` for the bootstrap is the
    smallest level at which the percentile interval excludes zero and is not
    a valid test.
    """

    method: str
    point: np.ndarray
    ci: np.ndarray
    level: float
    p_value: np.ndarray
    variance: np.ndarray | None = None
    n_boot: int = 0
    n_skipped: int = 0
    replicates: np.ndarray | None = None
    lam: float | None = None
    details: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def se(self):
        if self.variance is None:
            return None
        return np.sqrt(np.clip(np.diag(self.variance), 0.0, None))

    def to_dict(self):
        out = {
            "method": self.method,
            "estimate": self.point.tolist(),
            "ci_lower": self.ci[:, 0].tolist(),
            "ci_upper": self.ci[:, 1].tolist(),
            "p_value": self.p_value.tolist(),
            "level": self.level,
            "warnings": list(self.warnings),
        }
        if self.variance is not None:
            out["variance"] = self.variance.tolist()
            out["se"] = self.se.tolist()
        if self.method == "naive_bootstrap":
            out.update(n_boot=self.n_boot, n_skipped=self.n_skipped, lam=self.lam,
                       p_value_rigorous=False)
        out.update(self.details)
        return out


def _ready(data):
    data.validate()
    return data if data.centered else prepare(data)


def ols_total_effect(data: Dataset, level=0.95) -> BaselineEstimate:
    """Regress ``Y`` on ``S`` (and covariates); Wald interval for the ``S`` block."""
    data = _ready(data)
    q = data.q
    data = partial_out(data)
    mom = moments(data)
    coef, sigma2 = ols(data.S, data.Y)
    var = sigma2 * mom.sigma_ss_inv() / mom.n
    var = 0.5 * (var + var.T)[:q, :q]
    w = wald(coef[:q], var, level)
    warns = []
    if np.any(w.degenerate):
        warns.append({"code": "zero_variance",
                      "message": "exact fit: residual variance is zero",
                      "components": np.flatnonzero(w.degenerate).tolist()})
    return BaselineEstimate(method="ols", point=coef[:q], ci=w.ci, level=level,
                            p_value=w.p, variance=var, details={"z": w.z.tolist()},
                            warnings=warns)


def _design(data, mode):
    """Outcome-regression design for the naive estimator, plus reporting info."""
    q = data.q
    if mode == "complete":
        data = residualize(data)
        return data, data.G, q
    if mode == "incomplete":
        data = partial_out(data)
        return data, np.hstack([data.G, data.S]), q
    raise DataError(f"unknown mode {mode!r}")


def _lasso_standardized(X, y, lam):
    sd = X.std(axis=0)
    sd[sd <= 0] = 1.0
    beta = lasso_cd(X / sd, y, lam)
    return beta / sd


def naive_indirect(data: Dataset, lam, mode="complete") -> np.ndarray:
    """``sigma_ss^{-1} sigma_sg alpha0`` with ``alpha0`` from a plain lasso.

    The lasso runs on unit-variance columns at penalty ``lam`` (with the
    ``1/(2n)`` loss scaling). In incomplete mode the lasso includes the
    exposures and the mediator block of its coefficients is used.
    """
    data = _ready(data)
    data, X, q = _design(data, mode)
    mom = moments(data)
    beta = _lasso_standardized(X, data.Y, lam)
    alpha0 = beta[: mom.p]
    return (mom.sigma_ss_inv() @ (mom.sigma_sg @ alpha0))[:q]


def naive_lambda(data: Dataset, mode="complete", lambda_scheme="quantile"):
    """Universal penalty ``sqrt(2 log p / n) * sigma_hat``.

    ``sigma_hat`` comes from a preliminary scaled lasso on the same design.
    """
    data = _ready(data)
    data, X, _ = _design(data, mode)
    n, m = X.shape
    fit = scaled_lasso(X, data.Y, penalty_level(n, m, lambda_scheme))
    p = data.G.shape[1]
    return float(np.sqrt(2.0 * np.log(p) / n) * fit.sigma_hat) if p > 1 else 0.0


def naive_bootstrap(data: Dataset, lambda_rule="universal", B=500, level=0.95,
                    seed=0, mode="complete", n_jobs=1, lam=None) -> BaselineEstimate:
    """Naive lasso product estimate with a pairs-bootstrap percentile interval.

    Parameters
    ----------
    lambda_rule : {'universal'}
        Penalty rule, applied once to the full data and reused for every
        resample. Ignored when ``lam`` is given.
    B : int
        Number of resamples (at least 100).
    seed : int
        Seeds a ``SeedSequence``; replicate ``b`` uses its ``b``-th child, so
        the result does not depend on ``n_jobs``.
    """
    if B < 100:
        raise DataError(f"need at least 100 bootstrap resamples, got {B}")
    if not 0 < level < 1:
        raise DataError(f"level must lie in (0, 1), got {level}")
    data.validate()
    raw = data
    data = prepare(raw)
    if lam is None:
        if lambda_rule != "universal":
            raise DataError(f"unknown lambda rule {lambda_rule!r}")
        lam = naive_lambda(data, mode)
    point = naive_indirect(data, lam, mode)
    q = point.size

    children = np.random.SeedSequence(seed).spawn(B)

    def replicate(b):
        rng = np.random.default_rng(children[b])
        idx = rng.integers(0, raw.n, raw.n)
        boot = Dataset(
            Y=raw.Y[idx], G=raw.G[idx], S=raw.S[idx],
            Z=None if raw.Z is None else raw.Z[idx],
            n_exposures=raw.n_exposures,
        )
        try:
            return naive_indirect(prepare(boot), lam, mode)
        except SingularMatrixError:
            return None

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(replicate, range(B)))
    else:
        results = [replicate(b) for b in range(B)]
    kept = [r for r in results if r is not None]
    skipped = B - len(kept)
    if skipped > MAX_SKIP_FRACTION * B:
        raise NumericalError(
            f"{skipped} of {B} bootstrap resamples had singular exposure moments"
        )
    reps = np.vstack(kept) if kept else np.zeros((0, q))
    a = 1.0 - level
    ci = np.quantile(reps, [a / 2, 1 - a / 2], axis=0, method="inverted_cdf").T
    below = (reps <= 0).mean(axis=0)
    above = (reps >= 0).mean(axis=0)
    pval = np.minimum(1.0, 2.0 * np.minimum(below, above))
    warns = [{"code": "bootstrap_p_value_not_rigorous",
              "message": "bootstrap p-values come from percentile-interval "
                         "inversion and are not valid tests"}]
    if skipped:
        warns.append({"code": "bootstrap_skipped",
                      "message": "resamples with singular exposure moments were skipped",
                      "count": skipped})
    return BaselineEstimate(
        method="naive_bootstrap", point=point, ci=ci, level=level, p_value=pval,
        n_boot=len(kept), n_skipped=skipped, replicates=reps, lam=lam,
        details={"lambda_rule": lambda_rule, "bootstrap": "pairs", "seed": seed,
                 "mode": mode},
        warnings=warns,
    )
