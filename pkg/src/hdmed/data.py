"""Data containers, centering and sample cross-moments.

All moment matrices use the ``1/n`` convention, e.g.
``sigma_sg = S.T @ G / n``. The stacked design is ``X = (G, S)`` so the
mediator block always comes first.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, SingularMatrixError

#: Reciprocal condition number below which ``sigma_ss`` is declared singular.
RCOND_MIN = 1e-10


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DataError(f"{name} must be one- or two-dimensional, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Dataset:
    """Outcome, mediators, exposures and optional covariates for ``n`` units.

    Parameters
    ----------
    Y : array, shape (n,)
    G : array, shape (n, p)
        Candidate mediators.
    S : array, shape (n, q)
        Exposures. A 1-d array is treated as a single exposure.
    Z : array, shape (n, r), optional
        Covariates / confounders.
    centered : bool
        Set by :func:`prepare`.
    n_exposures : int, optional
        Number of leading ``S`` columns that are genuine exposures. Set by
        :func:`partial_out` when covariates were appended to ``S``.
    """

    Y: np.ndarray
    G: np.ndarray
    S: np.ndarray
    Z: np.ndarray | None = None
    centered: bool = False
    n_exposures: int | None = None
    names: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 2 and Y.shape[1] == 1:
            Y = Y[:, 0]
        if Y.ndim != 1:
            raise DataError(f"Y must be a vector, got shape {Y.shape}")
        G = _as_matrix(self.G, "G")
        S = _as_matrix(self.S, "S")
        Z = None if self.Z is None else _as_matrix(self.Z, "Z")
        if Z is not None and Z.shape[1] == 0:
            Z = None
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def p(self):
        return self.G.shape[1]

    @property
    def q(self):
        """Number of exposures to report on (excludes appended covariates)."""
        return self.S.shape[1] if self.n_exposures is None else self.n_exposures

    def validate(self):
        n = self.n
        blocks = {"G": self.G, "S": self.S}
        if self.Z is not None:
            blocks["Z"] = self.Z
        for name, block in blocks.items():
            if block.shape[0] != n:
                raise DataError(
                    f"row count mismatch: Y has {n} rows but {name} has {block.shape[0]}"
                )
        if n < 2:
            raise DataError(f"need at least 2 observations, got {n}")
        if self.S.shape[1] < 1:
            raise DataError("need at least one exposure column")
        if self.G.shape[1] < 1:
            raise DataError("need at least one mediator column")
        for name, block in [("Y", self.Y), *blocks.items()]:
            if not np.all(np.isfinite(block)):
                raise DataError(f"{name} contains non-finite values")
        return self


def prepare(raw: Dataset) -> Dataset:
    """Return a column-centered copy of ``raw``; the input is not modified."""
    raw.validate()

    def center(a):
        return a - a.mean(axis=0)

    Z = None if raw.Z is None else center(raw.Z)
    return replace(
        raw,
        Y=center(raw.Y),
        G=center(raw.G),
        S=center(raw.S),
        Z=Z,
        centered=True,
    )


@dataclass(frozen=True)
class SampleMoments:
    """Sample cross-moment matrices of a centered dataset."""

    n: int
    sigma_ss: np.ndarray
    sigma_sg: np.ndarray
    sigma_gg: np.ndarray
    sigma_xx: np.ndarray
    sigma_xy: np.ndarray
    sigma_gy: np.ndarray
    sigma_sy: np.ndarray
    d_hat: np.ndarray

    @property
    def p(self):
        return self.sigma_gg.shape[0]

    @property
    def q(self):
        return self.sigma_ss.shape[0]

    def sigma_ss_inv(self):
        return np.linalg.inv(self.sigma_ss)


def check_invertible(sigma_ss, what="sigma_ss"):
    """Raise :class:`SingularMatrixError` if ``sigma_ss`` is ill-conditioned."""
    sigma_ss = np.atleast_2d(sigma_ss)
    if not np.all(np.isfinite(sigma_ss)):
        raise SingularMatrixError(f"{what} has non-finite entries")
    eig = np.linalg.eigvalsh(sigma_ss)
    top = eig[-1]
    if top <= 0 or eig[0] / top < RCOND_MIN:
        rcond = 0.0 if top <= 0 else eig[0] / top
        raise SingularMatrixError(
            f"{what} is singular (reciprocal condition number {rcond:.3g}); "
            "exposures (and covariates) are collinear or constant"
        )


def moments(data: Dataset) -> SampleMoments:
    """Compute all cross-moment matrices of a centered dataset."""
    if not data.centered:
        raise DataError("moments() expects centered data; call prepare() first")
    n = data.n
    G, S, Y = data.G, data.S, data.Y
    p, q = G.shape[1], S.shape[1]
    X = np.hstack([G, S])
    sigma_xx = X.T @ X / n
    sigma_xx = 0.5 * (sigma_xx + sigma_xx.T)
    sigma_gg = sigma_xx[:p, :p].copy()
    sigma_ss = sigma_xx[p:, p:].copy()
    sigma_sg = sigma_xx[p:, :p].copy()
    check_invertible(sigma_ss)
    sigma_xy = X.T @ Y / n
    d_hat = np.zeros((2 * q, p + q))
    d_hat[:q, :p] = sigma_sg
    d_hat[q:, p:] = sigma_ss
    return SampleMoments(
        n=n,
        sigma_ss=sigma_ss,
        sigma_sg=sigma_sg,
        sigma_gg=sigma_gg,
        sigma_xx=sigma_xx,
        sigma_xy=sigma_xy,
        sigma_gy=sigma_xy[:p].copy(),
        sigma_sy=sigma_xy[p:].copy(),
        d_hat=d_hat,
    )


def partial_out(data: Dataset) -> Dataset:
    """Append covariates to the exposure block.

    Builds the augmented exposure ``(S, Z)`` so that the stacked design
    becomes ``(G, S, Z)``. The returned dataset records the original number
    of exposures in ``n_exposures``; estimators report only those leading
    components. Without covariates the input is returned unchanged.
    """
    if data.Z is None:
        return data
    S_aug = np.hstack([data.S, data.Z])
    out = replace(data, S=S_aug, Z=None, n_exposures=data.q)
    if out.centered:
        check_invertible(S_aug.T @ S_aug / out.n, "augmented sigma_ss")
    return out


def residualize(data: Dataset) -> Dataset:
    """Project the covariates out of ``Y``, ``G`` and ``S`` (Frisch-Waugh).

    Used by the complete-mediation estimator, whose outcome regression has
    no exposure block to augment.
    """
    if data.Z is None:
        return data
    if not data.centered:
        data = prepare(data)
    Z = data.Z
    check_invertible(Z.T @ Z / data.n, "sigma_zz")
    coef_y, *_ = np.linalg.lstsq(Z, data.Y, rcond=None)
    coef_g, *_ = np.linalg.lstsq(Z, data.G, rcond=None)
    coef_s, *_ = np.linalg.lstsq(Z, data.S, rcond=None)
    return replace(
        data,
        Y=data.Y - Z @ coef_y,
        G=data.G - Z @ coef_g,
        S=data.S - Z @ coef_s,
        Z=None,
    )


def ols(S, Y):
    """Least-squares fit of ``Y`` on ``S`` (no intercept; data centered).

    Returns
    -------
    coef : array, shape (q,)
    sigma2 : float
        Residual variance ``RSS / n``.
    """
    S = _as_matrix(S, "S")
    n = S.shape[0]
    sigma_ss = S.T @ S / n
    check_invertible(sigma_ss)
    coef = np.linalg.solve(sigma_ss, S.T @ Y / n)
    resid = Y - S @ coef
    return coef, float(resid @ resid / n)


# --------------------------------------------------------------------------
# CSV ingestion


def _read_csv(path):
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise DataError(f"{path}: no data rows")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(
                f"{path}:{i}: expected {len(header)} fields, got {len(row)}"
            )
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "" or cell.upper() in {"NA", "NAN", "NULL"}:
                raise DataError(f"{path}:{i}: missing value in column {header[j]!r}")
            try:
                values[i - 2, j] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}:{i}: non-numeric value {cell!r} in column {header[j]!r}"
                ) from None
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite values")
    return header, values


def load_csv(path, outcome, exposures, covariates=()):
    """Load a single CSV holding every variable.

    Parameters
    ----------
    path : path-like
        File with a header row.
    outcome : str
        Outcome column name.
    exposures : sequence of str
        Exposure column names.
    covariates : sequence of str
        Covariate column names. All remaining columns are mediators.
    """
    header, values = _read_csv(path)
    index = {name: j for j, name in enumerate(header)}
    wanted = [outcome, *exposures, *covariates]
    missing = [c for c in wanted if c not in index]
    if missing:
        raise DataError(f"{path}: columns not found: {', '.join(missing)}")
    if len(set(wanted)) != len(wanted):
        raise DataError("outcome, exposure and covariate columns must be distinct")
    mediators = [c for c in header if c not in set(wanted)]
    if not mediators:
        raise DataError(f"{path}: no mediator columns left")

    def cols(names):
        return values[:, [index[c] for c in names]]

    data = Dataset(
        Y=values[:, index[outcome]],
        G=cols(mediators),
        S=cols(exposures),
        Z=cols(covariates) if covariates else None,
        names={
            "outcome": outcome,
            "exposures": list(exposures),
            "covariates": list(covariates),
            "mediators": mediators,
        },
    )
    return data.validate()


def load_csv_files(outcome, mediators, exposures, covariates=None):
    """Load a dataset split across separate CSV files (one block per file)."""
    y_head, y = _read_csv(outcome)
    if y.shape[1] != 1:
        raise DataError(f"{outcome}: outcome file must have exactly one column")
    g_head, G = _read_csv(mediators)
    s_head, S = _read_csv(exposures)
    Z, z_head = None, []
    if covariates is not None:
        z_head, Z = _read_csv(covariates)
    data = Dataset(
        Y=y[:, 0],
        G=G,
        S=S,
        Z=Z,
        names={
            "outcome": y_head[0],
            "exposures": s_head,
            "covariates": z_head,
            "mediators": g_head,
        },
    )
    return data.validate()
