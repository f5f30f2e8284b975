"""Monte-Carlo harness for the mediation estimators.

Data follow

    G = c * S gamma' + E,   E ~ N(0, Sigma_E)
    Y = G alpha0 + S alpha1 + eps1

with standard normal exposures. ``gamma``, ``alpha0`` and ``Sigma_E`` are
drawn once from the scenario seed and held fixed across replications; only
``S``, ``E`` and ``eps1`` are redrawn. The indirect effect is
``beta0 = c * gamma' alpha0``.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import naive_bootstrap, ols_total_effect
from .data import Dataset, prepare
from .errors import DataError, HdmedError, NumericalError
from .inference import InferenceConfig, fit_complete, fit_incomplete

MAX_FAIL_FRACTION = 0.05
METHODS = ("proposed_incomplete", "proposed_complete", "ols", "naive")


# --------------------------------------------------------------------------
# covariance of the mediator noise


@dataclass(frozen=True)
class GraphSpec:
    """Chain-of-clusters precision graph.

    Mediators are split into consecutive clusters of ``cluster_size``; within
    a cluster neighbours are linked in a chain and extra random edges are
    added with probability ``extra_edge_prob`` while every node keeps at most
    ``max_degree`` neighbours. Every edge has weight ``edge_weight``.
    ``min_eig`` is the smallest eigenvalue enforced by diagonal loading.
    """

    cluster_size: int = 10
    edge_weight: float = 0.3
    max_degree: int = 4
    extra_edge_prob: float = 0.1
    min_eig: float = 0.1


def make_precision_graph(p, spec: GraphSpec | None = None, seed=0, return_precision=False):
    """Build ``Sigma_E`` with a sparse inverse and unit diagonal.

    Returns ``Sigma_E`` (and its inverse when ``return_precision``).
    """
    spec = spec or GraphSpec()
    if p < 1:
        raise DataError(f"p must be positive, got {p}")
    if not spec.min_eig > 0:
        raise DataError(f"min_eig must be positive, got {spec.min_eig}")
    rng = np.random.default_rng(seed)
    theta = np.zeros((p, p))
    deg = np.zeros(p, dtype=int)

    def link(i, j):
        if i != j and theta[i, j] == 0 and deg[i] < spec.max_degree and deg[j] < spec.max_degree:
            theta[i, j] = theta[j, i] = spec.edge_weight
            deg[i] += 1
            deg[j] += 1

    size = max(int(spec.cluster_size), 1)
    if spec.edge_weight != 0:
        for start in range(0, p, size):
            nodes = np.arange(start, min(start + size, p))
            for a, b in zip(nodes[:-1], nodes[1:]):
                link(a, b)
            if spec.extra_edge_prob > 0:
                for ia in range(nodes.size):
                    for ib in range(ia + 2, nodes.size):
                        if rng.random() < spec.extra_edge_prob:
                            link(nodes[ia], nodes[ib])

    # diagonal loading: lift the smallest eigenvalue of the precision to min_eig
    eig_theta = float(np.linalg.eigvalsh(theta)[0]) if p > 1 else 0.0
    prec = theta + max(1.0, spec.min_eig - eig_theta) * np.eye(p)

    sigma = np.linalg.inv(prec)
    scale = np.sqrt(np.diag(sigma))
    sigma = sigma / np.outer(scale, scale)
    sigma = 0.5 * (sigma + sigma.T)
    np.fill_diagonal(sigma, 1.0)
    if return_precision:
        # inverse of the rescaled matrix keeps the sparsity pattern
        return sigma, prec * np.outer(scale, scale)
    return sigma


# --------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class SimulationScenario:
    n: int = 300
    p: int = 500
    q: int = 1
    mode: str = "complete"
    alpha1: float = 0.0
    n_true_mediators: int = 1
    n_nonzero_gamma: int = 15
    n_nonzero_alpha0: int = 15
    alpha0_value: float = 1.0
    c: float = 0.0
    sigma1_sq: float = 5.0
    error_dist: str = "gaussian"
    graph: GraphSpec = field(default_factory=GraphSpec)
    observed_p: int | None = None
    observed_true: int | None = None
    tau: float | None = None
    seed: int = 0

    def validate(self):
        if self.mode not in {"incomplete", "complete"}:
            raise DataError(f"unknown mode {self.mode!r}")
        if self.error_dist not in {"gaussian", "t3_scaled"}:
            raise DataError(f"unknown error distribution {self.error_dist!r}")
        if self.n < 2 or self.p < 1 or self.q < 1:
            raise DataError("need n >= 2, p >= 1, q >= 1")
        k = self.n_true_mediators
        if k > min(self.n_nonzero_gamma, self.n_nonzero_alpha0):
            raise DataError("n_true_mediators exceeds the number of nonzero coefficients")
        if self.n_nonzero_gamma + self.n_nonzero_alpha0 - k > self.p:
            raise DataError("supports do not fit in p mediators")
        if (self.observed_p is None) != (self.observed_true is None):
            raise DataError("observed_p and observed_true must be given together")
        if self.observed_p is not None:
            if not 1 <= self.observed_p <= self.p:
                raise DataError("observed_p must lie in [1, p]")
            if not 0 <= self.observed_true <= k:
                raise DataError("observed_true must lie in [0, n_true_mediators]")
            if self.observed_true > self.observed_p or k - self.observed_true > self.p - self.observed_p:
                raise DataError("true mediators do not fit the observed/unobserved split")
        if self.mode == "complete" and self.alpha1 != 0:
            raise DataError("complete mode requires alpha1 = 0")
        return self


@dataclass
class Truth:
    beta0: np.ndarray
    alpha0: np.ndarray
    alpha1: np.ndarray
    gamma: np.ndarray
    c: float
    sigma_e: np.ndarray
    sigma1_sq: float
    true_mediators: np.ndarray


def _supports(scn, rng):
    """Index sets of nonzero alpha0 and gamma with the requested overlap."""
    p, k = scn.p, scn.n_true_mediators
    na, ng = scn.n_nonzero_alpha0, scn.n_nonzero_gamma
    if scn.observed_p is None:
        perm = rng.permutation(p)
        overlap = perm[:k]
        rest = perm[k:]
    else:
        # place exactly observed_true shared indices among the observed columns
        obs = rng.permutation(scn.observed_p)
        hid = scn.observed_p + rng.permutation(p - scn.observed_p)
        kt = scn.observed_true
        overlap = np.concatenate([obs[:kt], hid[: k - kt]])
        rest = rng.permutation(np.concatenate([obs[kt:], hid[k - kt:]]))
    alpha_only = rest[: na - k]
    gamma_only = rest[na - k: na - k + ng - k]
    return (np.sort(np.concatenate([overlap, alpha_only])),
            np.sort(np.concatenate([overlap, gamma_only])),
            np.sort(overlap))


def scenario_parameters(scn: SimulationScenario):
    """Fixed parameters of a scenario (everything except the per-rep draws)."""
    scn.validate()
    ss = np.random.SeedSequence(scn.seed)
    rng_supp, rng_gamma, rng_graph = (np.random.default_rng(s) for s in ss.spawn(3))
    a_idx, g_idx, overlap = _supports(scn, rng_supp)
    alpha0 = np.zeros(scn.p)
    alpha0[a_idx] = scn.alpha0_value
    gamma = np.zeros((scn.p, scn.q))
    gamma[g_idx, :] = rng_gamma.uniform(-1.0, 1.0, size=(g_idx.size, scn.q))
    sigma_e = make_precision_graph(scn.p, scn.graph, seed=rng_graph)
    alpha1 = np.full(scn.q, float(scn.alpha1))
    beta0 = scn.c * (gamma.T @ alpha0)
    return Truth(beta0=beta0, alpha0=alpha0, alpha1=alpha1, gamma=gamma, c=scn.c,
                 sigma_e=sigma_e, sigma1_sq=scn.sigma1_sq, true_mediators=overlap)


def c_for_beta0(scn: SimulationScenario, beta0):
    """Scale ``c`` giving the first indirect-effect component ``beta0``."""
    base = scenario_parameters(replace(scn, c=1.0))
    unit = float((base.gamma.T @ base.alpha0)[0])
    if unit == 0.0:
        if beta0 == 0:
            return 0.0
        raise DataError("gamma' alpha0 is zero; no c reaches a nonzero beta0")
    return float(beta0) / unit


def beta0_grid(scn: SimulationScenario, values):
    """Scenarios with ``c`` set so that ``beta0`` runs through ``values``."""
    return [replace(scn, c=c_for_beta0(scn, b)) for b in values]


def generate(scn: SimulationScenario, rep_seed, truth: Truth | None = None):
    """Draw one dataset.

    Returns
    -------
    data : Dataset
        Raw (uncentered) draw; under misspecification only the first
        ``observed_p`` mediators are kept.
    truth : Truth
    """
    if truth is None:
        truth = scenario_parameters(scn)
    rng = np.random.default_rng(rep_seed)
    n, p, q = scn.n, scn.p, scn.q
    S = rng.standard_normal((n, q))
    chol = np.linalg.cholesky(truth.sigma_e)
    E = rng.standard_normal((n, p)) @ chol.T
    G = truth.c * S @ truth.gamma.T + E
    if scn.error_dist == "gaussian":
        eps = rng.standard_normal(n) * np.sqrt(scn.sigma1_sq)
    else:
        eps = rng.standard_t(3, size=n) * np.sqrt(scn.sigma1_sq / 3.0)
    Y = G @ truth.alpha0 + S @ truth.alpha1 + eps
    if scn.observed_p is not None:
        G = G[:, : scn.observed_p]
    return Dataset(Y=Y, G=G, S=S), truth


def population_variance_oracle(truth: Truth, scn: SimulationScenario | None = None):
    """Asymptotic variances of ``sqrt(n)`` times each estimator of ``beta0``.

    Population moments: ``Sigma_SS = I``, ``Sigma_SG = c gamma'``,
    ``Sigma_GG = c^2 gamma gamma' + Sigma_E``, ``sigma2^2 = alpha0' Sigma_E alpha0``.

    Returns
    -------
    dict with ``var_complete``, ``var_ols`` and ``var_incomplete`` (q x q)
    and ``sigma2_sq``.
    """
    q = truth.gamma.shape[1]
    p = truth.gamma.shape[0]
    s1 = truth.sigma1_sq
    s2 = float(truth.alpha0 @ truth.sigma_e @ truth.alpha0)
    sigma_sg = truth.c * truth.gamma.T
    sigma_gg = truth.c**2 * truth.gamma @ truth.gamma.T + truth.sigma_e
    eye = np.eye(q)
    var_complete = s1 * sigma_sg @ np.linalg.solve(sigma_gg, sigma_sg.T) + s2 * eye
    var_ols = (s1 + s2) * eye
    sigma_xx = np.block([[sigma_gg, sigma_sg.T], [sigma_sg, eye]])
    d = np.zeros((2 * q, p + q))
    d[:q, :p] = sigma_sg
    d[q:, p:] = eye
    full = s1 * d @ np.linalg.solve(sigma_xx, d.T)
    full[:q, :q] += s2 * eye
    return {
        "var_complete": 0.5 * (var_complete + var_complete.T),
        "var_ols": var_ols,
        "var_incomplete": 0.5 * (full[:q, :q] + full[:q, :q].T),
        "cov_incomplete": 0.5 * (full + full.T),
        "sigma2_sq": s2,
    }


# --------------------------------------------------------------------------
# experiments


@dataclass
class SimulationReport:
    """Aggregated metrics per (scenario, method) cell plus per-rep records."""

    cells: list
    records: dict
    config: dict
    runtime_seconds: float = 0.0

    def cell(self, index, method):
        for c in self.cells:
            if c["cell"] == index and c["method"] == method:
                return c
        raise KeyError((index, method))

    def to_json(self, include_records=False):
        # wall time stays off the report so reruns are byte-identical
        doc = {"schema_version": 1, "config": self.config, "cells": self.cells}
        if include_records:
            doc["records"] = {k: v for k, v in self.records.items()}
        return json.dumps(doc, indent=2, sort_keys=True)

    def csv_rows(self):
        rows = [("cell", "beta0", "method", "metric", "value", "mc_se", "n_reps", "n_failed")]
        for c in self.cells:
            for metric in ("coverage", "power", "mean_ci_length", "risk"):
                rows.append((c["cell"], c["beta0"], c["method"], metric,
                             c[metric], c[metric + "_se"], c["n_reps"], c["n_failed"]))
        return rows

    def to_csv(self):
        import csv
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in self.csv_rows():
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _run_method(method, data, scn, level, seed, options):
    """Return (estimate, lower, upper, p_value, se) for the first component."""
    if method in ("proposed_complete", "proposed_incomplete"):
        cfg = InferenceConfig(tau=scn.tau, level=level,
                              lambda_scheme=options.get("lambda_scheme", "quantile"),
                              on_infeasible=options.get("on_infeasible", "error"))
        fit = fit_complete if method == "proposed_complete" else fit_incomplete
        est = fit(data, cfg)
        return (est.b_hat[0], est.ci[0, 0], est.ci[0, 1], est.p_values[0], est.se[0])
    if method == "ols":
        est = ols_total_effect(data, level)
        return (est.point[0], est.ci[0, 0], est.ci[0, 1], est.p_value[0], est.se[0])
    if method == "naive":
        est = naive_bootstrap(data, B=options.get("naive_B", 200), level=level,
                              seed=seed, mode=scn.mode)
        return (est.point[0], est.ci[0, 0], est.ci[0, 1], est.p_value[0], np.nan)
    raise DataError(f"unknown method {method!r}")


def _rep_seeds(seed, cell, rep):
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(cell, rep))
    data_ss, method_ss = ss.spawn(2)
    return data_ss, int(method_ss.generate_state(1)[0])


def _summarize(rows, beta0, level):
    est, lo, hi, pv, se = (np.array(col, dtype=float) for col in zip(*rows)) if rows else [np.zeros(0)] * 5
    k = est.size
    alpha = 1.0 - level

    def mean_se(x):
        if x.size == 0:
            return float("nan"), float("nan")
        sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        return float(np.mean(x)), sd / np.sqrt(x.size)

    cover = ((lo <= beta0) & (beta0 <= hi)).astype(float)
    reject = (pv < alpha).astype(float)
    length = hi - lo
    sq = (est - beta0) ** 2
    out = {}
    for name, x in (("coverage", cover), ("power", reject),
                    ("mean_ci_length", length), ("risk", sq)):
        m, s = mean_se(x)
        out[name], out[name + "_se"] = m, s
    out["n_ok"] = k
    return out


def run_experiment(scenarios, methods=("proposed_complete", "ols"), n_reps=200,
                   level=0.95, seed=0, n_jobs=1, options=None, strict=True):
    """Replicate every scenario ``n_reps`` times and score each method.

    Replication ``r`` of scenario ``i`` draws its data from
    ``SeedSequence(seed, spawn_key=(i, r))``, so results do not depend on
    ``n_jobs`` or scheduling order. A method that raises on a replication is
    excluded from that replication's metrics and counted; more than 5%
    failures in any cell raises :class:`NumericalError` when ``strict``.
    """
    if n_reps < 2:
        raise DataError(f"n_reps must be at least 2, got {n_reps}")
    options = dict(options or {})
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise DataError(f"unknown method {m!r}")
    scenarios = [s.validate() for s in scenarios]
    truths = [scenario_parameters(s) for s in scenarios]

    def one(job):
        i, r = job
        scn, truth = scenarios[i], truths[i]
        data_ss, mseed = _rep_seeds(seed, i, r)
        data, _ = generate(scn, data_ss, truth)
        data = prepare(data)
        out = {}
        for m in methods:
            try:
                out[m] = tuple(float(v) for v in _run_method(m, data, scn, level, mseed, options))
            except HdmedError as exc:
                out[m] = type(exc).__name__
        return out

    jobs = [(i, r) for i in range(len(scenarios)) for r in range(n_reps)]
    t0 = time.perf_counter()
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    runtime = time.perf_counter() - t0

    cells, records = [], {}
    for i, scn in enumerate(scenarios):
        beta0 = float(truths[i].beta0[0])
        block = results[i * n_reps:(i + 1) * n_reps]
        for m in methods:
            rows = [b[m] for b in block if not isinstance(b[m], str)]
            failures = [b[m] for b in block if isinstance(b[m], str)]
            if strict and len(failures) > MAX_FAIL_FRACTION * n_reps:
                raise NumericalError(
                    f"scenario {i}, method {m}: {len(failures)} of {n_reps} replications failed "
                    f"({', '.join(sorted(set(failures)))})"
                )
            summary = _summarize(rows, beta0, level)
            cells.append({"cell": i, "beta0": beta0, "c": scn.c, "method": m,
                          "n_reps": n_reps, "n_failed": len(failures), **summary})
            records[f"{i}:{m}"] = {
                "estimate": [r[0] for r in rows], "ci_lower": [r[1] for r in rows],
                "ci_upper": [r[2] for r in rows], "p_value": [r[3] for r in rows],
                "se": [r[4] for r in rows],
            }
    config = {
        "seed": seed, "n_reps": n_reps, "level": level, "methods": methods,
        "options": options,
        "scenarios": [scenario_to_dict(s) for s in scenarios],
        "beta0": [float(t.beta0[0]) for t in truths],
    }
    return SimulationReport(cells=cells, records=records, config=config,
                            runtime_seconds=runtime)


def scenario_to_dict(scn: SimulationScenario):
    return asdict(scn)


# --------------------------------------------------------------------------
# scenario files

_INT_KEYS = {"n", "p", "q", "n_true_mediators", "n_nonzero_gamma", "n_nonzero_alpha0",
             "observed_p", "observed_true", "seed"}
_FLOAT_KEYS = {"alpha1", "alpha0_value", "c", "sigma1_sq", "tau"}
_STR_KEYS = {"mode", "error_dist"}
_GRAPH_INT = {"cluster_size", "max_degree"}
_GRAPH_FLOAT = {"edge_weight", "extra_edge_prob", "min_eig"}
_RUN_KEYS = {"beta0", "methods", "n_reps", "level", "run_seed", "naive_B", "lambda_scheme",
             "on_infeasible"}


def parse_scenario_file(path):
    """Read a ``key = value`` scenario file.

    Scenario fields use their attribute names, graph fields take a
    ``graph.`` prefix, and run options are ``beta0`` (comma-separated grid),
    ``methods``, ``n_reps``, ``level``, ``run_seed``, ``naive_B``,
    ``lambda_scheme`` and ``on_infeasible``. ``#`` starts a comment.

    Returns
    -------
    scenarios : list of SimulationScenario
        One per ``beta0`` grid value (or a single scenario when no grid).
    run : dict
        Run options that were present.
    """
    text = Path(path).read_text()
    fields, graph, run = {}, {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        try:
            if key in _INT_KEYS:
                fields[key] = int(value)
            elif key in _FLOAT_KEYS:
                fields[key] = None if value.lower() == "none" else float(value)
            elif key in _STR_KEYS:
                fields[key] = value
            elif key.startswith("graph."):
                gk = key[6:]
                if gk in _GRAPH_INT:
                    graph[gk] = int(value)
                elif gk in _GRAPH_FLOAT:
                    graph[gk] = float(value)
                else:
                    raise DataError(f"{path}:{lineno}: unknown graph key {gk!r}")
            elif key in _RUN_KEYS:
                if key == "beta0":
                    run[key] = [float(v) for v in value.split(",") if v.strip()]
                elif key == "methods":
                    run[key] = [v.strip() for v in value.split(",") if v.strip()]
                elif key in {"n_reps", "run_seed", "naive_B"}:
                    run[key] = int(value)
                elif key == "level":
                    run[key] = float(value)
                else:
                    run[key] = value
            else:
                raise DataError(f"{path}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    base = SimulationScenario(graph=GraphSpec(**graph), **fields).validate()
    if "beta0" in run:
        if "c" in fields:
            raise DataError(f"{path}: give either c or a beta0 grid, not both")
        return beta0_grid(base, run["beta0"]), run
    return [base], run
