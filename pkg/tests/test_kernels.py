"""Compiled kernels against the numpy fallback, and backend selection."""
import os
import subprocess
import sys

import numpy as np
import pytest

from hdmed import kernels
from hdmed.kernels import get_backend

py = get_backend("python")
try:
    cy = get_backend("cython")
except ImportError:  # extension not built
    cy = None

needs_cython = pytest.mark.skipif(cy is None, reason="compiled kernels not built")


def _design(rng, n, m):
    X = np.asfortranarray(rng.standard_normal((n, m)))
    return X, np.ascontiguousarray(X.T @ X / n)


@needs_cython
def test_cd_sweep_backends_agree(rng):
    X, _ = _design(rng, 60, 30)
    y = X[:, :3].sum(axis=1) + rng.standard_normal(60)
    colsq = np.ascontiguousarray((X * X).sum(axis=0) / 60)
    lam = np.full(30, 0.1)
    idx = np.arange(30, dtype=np.intp)
    out = []
    for mod in (py, cy):
        beta = np.zeros(30)
        r = y.copy()
        steps = [mod.cd_sweep(X, r, beta, colsq, lam, idx, 60) for _ in range(5)]
        out.append((beta, r, steps))
    np.testing.assert_allclose(out[0][0], out[1][0], atol=1e-12)
    np.testing.assert_allclose(out[0][1], out[1][1], atol=1e-12)
    np.testing.assert_allclose(out[0][2], out[1][2], atol=1e-12)


@needs_cython
def test_admm_block_backends_agree(rng):
    _, sigma = _design(rng, 50, 20)
    d = np.zeros(20)
    d[0] = 1.0
    lip = float(np.linalg.norm(sigma, 2)) ** 2
    out = []
    for mod in (py, cy):
        w, sw, u = np.zeros(20), np.zeros(20), np.zeros(20)
        z = np.clip(-d, -0.1, 0.1)
        res = mod.admm_block(sigma, d, 0.1, lip, 1.0, w, z, u, sw, 50)
        out.append((w, z, u, res))
    for a, b in zip(out[0][:3], out[1][:3]):
        np.testing.assert_allclose(a, b, atol=1e-10)
    np.testing.assert_allclose(out[0][3], out[1][3], rtol=1e-8, atol=1e-12)


@needs_cython
@pytest.mark.parametrize("k,l", [(0, 3), (3, 0), (4, 4), (5, 2)])
def test_ger_block_backends_agree(rng, k, l):
    A = np.asfortranarray(rng.standard_normal((6, 6)))
    x, y = rng.standard_normal(6), rng.standard_normal(6)
    expect = A.copy()
    expect[:k, :l] += 0.7 * np.outer(x[:k], y[:l])
    for mod in (py, cy):
        B = A.copy(order="F")
        mod.ger_block(B, k, l, 0.7, x, y)
        np.testing.assert_allclose(B, expect, atol=1e-14)


def _path(mod, sigma, d, tau, m):
    w, y = np.zeros(m), np.zeros(m)
    status, steps, t, ray, relaxed = mod.homotopy_path(
        np.asfortranarray(sigma), d, tau, 20 * m + 100, 1.001, w, y, 1e-7, 1e-10)
    return status, steps, t, ray, relaxed, w, y


@needs_cython
def test_homotopy_backends_agree(rng):
    """Same status, step count, level and solution on random instances.

    Half the instances have fewer samples than variables, so many end on
    an infeasibility ray; the ray directions must agree as well.
    """
    seen = set()
    for _ in range(120):
        m = int(rng.integers(2, 30))
        n = int(rng.integers(m // 2 + 1, 2 * m + 2))
        X = rng.standard_normal((n, m))
        sigma = X.T @ X / n
        d = 0.5 * rng.standard_normal(m)
        tau = float(rng.uniform(0.0, 0.3))
        a = _path(py, sigma, d, tau, m)
        b = _path(cy, sigma, d, tau, m)
        seen.add(a[0])
        assert a[:2] == b[:2]
        assert a[4] == b[4]
        assert a[2] == pytest.approx(b[2], rel=1e-8, abs=1e-12)
        scale = max(1.0, float(np.abs(a[5]).max()), float(np.abs(a[6]).max()))
        np.testing.assert_allclose(a[5], b[5], atol=1e-6 * scale)
        np.testing.assert_allclose(a[6], b[6], atol=1e-6 * scale)
        if a[0] == kernels.HOMOTOPY_RAY:
            scale = float(np.abs(a[3]).max())
            np.testing.assert_allclose(a[3], b[3], atol=1e-6 * scale)
    assert {kernels.HOMOTOPY_OK, kernels.HOMOTOPY_RAY} <= seen


@pytest.mark.parametrize("mod", [py] + ([cy] if cy is not None else []),
                         ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_homotopy_trivial_level(mod):
    # tau at or above ||d||_inf: zero is optimal, no steps taken
    status, steps, t, ray, relaxed, w, y = _path(mod, np.eye(3), np.array([0.2, -0.5, 0.1]),
                                                 0.5, 3)
    assert (status, steps, ray, relaxed) == (kernels.HOMOTOPY_OK, 0, None, False)
    assert t == 0.5
    assert not w.any()


@pytest.mark.parametrize("mod", [py] + ([cy] if cy is not None else []),
                         ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_homotopy_ray_on_singular_block(mod):
    # sigma = 11': only d with equal entries is reachable; the best level is 1
    sigma = np.ones((2, 2))
    status, steps, t, ray, relaxed, w, y = _path(mod, sigma, np.array([1.0, -1.0]), 0.1, 2)
    assert status == kernels.HOMOTOPY_RAY
    assert t == pytest.approx(1.0)
    assert float(np.abs(sigma @ ray).max()) < 1e-12
    assert -float(ray @ np.array([1.0, -1.0])) / float(np.abs(ray).sum()) == pytest.approx(1.0)


@pytest.mark.parametrize("flag,expected", [("1", "python"), ("0", None)])
def test_pure_python_switch(flag, expected):
    env = dict(os.environ, HDMED_PURE_PYTHON=flag)
    out = subprocess.run(
        [sys.executable, "-c", "import hdmed.kernels as k; print(k.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    ).stdout.strip()
    assert out == (expected or ("cython" if cy is not None else "python"))


def test_unknown_backend():
    with pytest.raises(ValueError):
        get_backend("fortran")
