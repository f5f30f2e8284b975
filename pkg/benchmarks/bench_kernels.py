"""Time the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--n 300] [--m 500] [--repeat 5]

The homotopy case solves one debiasing row (target ``e_1``) at the
default tuning level.

Prints one line per kernel with the best wall time of each backend and
the speedup. The outputs of the two backends are also compared.
"""
import argparse
import time

import numpy as np

from hdmed.kernels import get_backend


def _best(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_cd(mod, X, y, lam, sweeps):
    n, m = X.shape
    colsq = np.ascontiguousarray((X * X).sum(axis=0) / n)
    lam_vec = np.full(m, lam)
    idx = np.arange(m, dtype=np.intp)

    def run():
        beta = np.zeros(m)
        r = y.copy()
        for _ in range(sweeps):
            mod.cd_sweep(X, r, beta, colsq, lam_vec, idx, n)
        return beta

    return run


def bench_admm(mod, sigma, d, tau, n_iter):
    m = d.shape[0]
    lip = float(np.linalg.norm(sigma, 2)) ** 2

    def run():
        w = np.zeros(m)
        sw = np.zeros(m)
        z = np.clip(-d, -tau, tau)
        u = np.zeros(m)
        mod.admm_block(sigma, d, tau, lip, 1.0, w, z, u, sw, n_iter)
        return w

    return run


def bench_ger(mod, k, rng):
    A = np.asfortranarray(rng.standard_normal((k, k)))
    x = rng.standard_normal(k)
    y = rng.standard_normal(k)

    def run():
        B = A.copy(order="F")
        for _ in range(50):
            mod.ger_block(B, k, k, 1e-3, x, y)
        return B

    return run


def bench_homotopy(mod, sigma, d, tau):
    m = d.shape[0]
    sig = np.asfortranarray(sigma)

    def run():
        w = np.zeros(m)
        y = np.zeros(m)
        mod.homotopy_path(sig, d, tau, 20 * m + 100, 1.001, w, y, 1e-7, 1e-10)
        return w

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--m", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sweeps", type=int, default=20)
    ap.add_argument("--admm-iter", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    X = np.asfortranarray(rng.standard_normal((args.n, args.m)))
    beta = np.zeros(args.m)
    beta[:10] = 1.0
    y = np.ascontiguousarray(X @ beta + rng.standard_normal(args.n))
    lam = float(np.sqrt(2 * np.log(args.m) / args.n))
    sigma = np.ascontiguousarray(X.T @ X / args.n)
    d = np.zeros(args.m)
    d[0] = 1.0
    tau = float(np.sqrt(np.log(args.m) / args.n) / 3.0)

    try:
        cy = get_backend("cython")
    except ImportError:
        print("compiled extension not built; nothing to compare")
        return 1
    py = get_backend("python")

    cases = [
        ("cd_sweep", lambda mod: bench_cd(mod, X, y, lam, args.sweeps)),
        ("admm_block", lambda mod: bench_admm(mod, sigma, d, tau, args.admm_iter)),
        ("ger_block", lambda mod: bench_ger(mod, min(args.n, args.m),
                                            np.random.default_rng(args.seed))),
        ("homotopy", lambda mod: bench_homotopy(mod, sigma, d, tau)),
    ]
    print(f"n={args.n} m={args.m} repeat={args.repeat}")
    for name, make in cases:
        t_py, out_py = _best(make(py), args.repeat)
        t_cy, out_cy = _best(make(cy), args.repeat)
        diff = float(np.max(np.abs(out_py - out_cy)))
        print(f"{name:12s} python {t_py * 1e3:9.2f} ms  cython {t_cy * 1e3:9.2f} ms  "
              f"speedup {t_py / t_cy:7.1f}x  max|diff| {diff:.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
