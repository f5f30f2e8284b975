"""Pure-Python/numpy versions of the compiled kernels.

Used when the Cython extension is unavailable or ``HDMED_PURE_PYTHON=1``.
Both implementations update their array arguments in place.
"""
import numpy as np


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def cd_sweep(X, r, beta, colsq, lam, idx, n):
    """One cyclic coordinate-descent pass over the coordinates in ``idx``.

    Minimizes ``(1/2n)||y - X beta||^2 + sum_j lam_j |beta_j|`` one
    coordinate at a time, keeping the residual ``r = y - X beta`` current.

    Returns
    -------
    float
        Largest gradient-scale step ``|delta beta_j| * colsq_j`` taken.
    """
    maxstep = 0.0
    inv_n = 1.0 / n
    for j in idx:
        cj = colsq[j]
        if cj <= 0.0:
            continue
        xj = X[:, j]
        old = beta[j]
        g = xj @ r * inv_n + cj * old
        if g > lam[j]:
            new = (g - lam[j]) / cj
        elif g < -lam[j]:
            new = (g + lam[j]) / cj
        else:
            new = 0.0
        if new != old:
            r -= (new - old) * xj
            beta[j] = new
            step = abs(new - old) * cj
            if step > maxstep:
                maxstep = step
    return maxstep


def admm_block(sigma, d, tau, lip, rho, w, z, u, sw, n_iter):
    """Run ``n_iter`` linearized-ADMM iterations for one l1 row problem.

    Problem: minimize ``||w||_1`` subject to ``|sigma @ w - d| <= tau``,
    split as ``z = sigma @ w - d`` with ``z`` in the box. ``u`` is the
    scaled dual and ``sw`` caches ``sigma @ w``.

    Returns
    -------
    (float, float)
        Primal and dual residual norms after the last iteration.
    """
    thr = 1.0 / (rho * lip)
    zold = z.copy()
    for _ in range(n_iter):
        grad = sigma @ (sw - d - z + u)
        w[:] = _soft(w - grad / lip, thr)
        sw[:] = sigma @ w
        zold[:] = z
        z[:] = np.clip(sw - d + u, -tau, tau)
        u += sw - d - z
    prim = np.linalg.norm(sw - d - z)
    dual = rho * np.linalg.norm(sigma @ (z - zold))
    return prim, dual


def ger_block(A, k, l, alpha, x, y):
    """In-place rank-one update ``A[:k, :l] += alpha * outer(x, y)``.

    ``A`` is a Fortran-ordered buffer whose leading block is updated.
    """
    if k == 0 or l == 0:
        return
    A[:k, :l] += alpha * np.outer(x[:k], y[:l])


# homotopy status codes (shared with the compiled kernel)
OK, RAY, SINGULAR, ILL_CONDITIONED, EMPTY, MAX_STEPS = range(6)


class _Stop(Exception):
    def __init__(self, status):
        super().__init__(status)
        self.status = status


class _ActiveInverse:
    """Explicit inverse of the active block ``sigma[T, S]`` under pivots.

    Each pivot changes one row and/or one column of the block, so the
    inverse is updated in O(k^2) by bordering, Sherman-Morrison or Schur
    deletion, and recomputed from scratch every ``refresh`` updates. The
    inverse lives in the leading block of a preallocated Fortran buffer.
    Row ``a`` of the inverse belongs to ``S[a]``, column ``b`` to ``T[b]``.
    """

    def __init__(self, sigma, refresh=50):
        self.sigma = sigma
        self.T, self.S = [], []
        self.buf = np.zeros((sigma.shape[0], sigma.shape[0]), order="F")
        self.refresh = refresh
        self.updates = 0
        self.tiny = 1e-12 * max(1.0, float(np.max(np.abs(sigma))))

    @property
    def inv(self):
        k = len(self.T)
        return self.buf[:k, :k]

    def rebuild(self):
        A = self.sigma[np.ix_(self.T, self.S)]
        try:
            inv = np.linalg.inv(A)
        except np.linalg.LinAlgError:
            raise _Stop(SINGULAR) from None
        if not np.all(np.isfinite(inv)):
            raise _Stop(SINGULAR)
        # probe the inverse with v_r = 1 + r / k: inv (A v) should return v
        k = A.shape[0]
        v = 1.0 + np.arange(k) / max(k, 1)
        if k and float(np.max(np.abs(inv @ (A @ v) - v))) > 2e-6:
            raise _Stop(ILL_CONDITIONED)
        self.buf[: inv.shape[0], : inv.shape[0]] = inv
        self.updates = 0

    def _tick(self):
        self.updates += 1
        if self.updates >= self.refresh:
            self.rebuild()

    def _check(self, piv):
        if not abs(piv) > self.tiny:
            raise _Stop(SINGULAR)

    def _ger(self, alpha, x, y):
        k = len(self.T)
        ger_block(self.buf, k, k, alpha, x, y)

    def grow(self, i, j):
        """Append row ``i`` to T and column ``j`` to S."""
        sig, B = self.sigma, self.inv
        u = sig[self.T, j]
        v = sig[i, self.S]
        x = B @ u
        yv = v @ B
        piv = sig[i, j] - v @ x
        self._check(piv)
        k = len(self.T)
        self._ger(1.0 / piv, x, yv)
        self.buf[:k, k] = -x / piv
        self.buf[k, :k] = -yv / piv
        self.buf[k, k] = 1.0 / piv
        self.T.append(i)
        self.S.append(j)
        self._tick()

    def replace_row(self, k, i):
        """Replace constraint ``T[k]`` by ``i``."""
        sig, B = self.sigma, self.inv
        w = sig[i, self.S] - sig[self.T[k], self.S]
        col = B[:, k].copy()
        piv = 1.0 + w @ col
        self._check(piv)
        self._ger(-1.0 / piv, col, w @ B)
        self.T[k] = i
        self._tick()

    def replace_col(self, pos, j):
        """Replace coefficient ``S[pos]`` by ``j``."""
        sig, B = self.sigma, self.inv
        x = B @ sig[self.T, j]
        piv = x[pos]
        self._check(piv)
        x[pos] -= 1.0
        self._ger(-1.0 / piv, x, B[pos, :].copy())
        self.S[pos] = j
        self._tick()

    def shrink(self, k, pos):
        """Drop constraint ``T[k]`` and coefficient ``S[pos]``.

        The last entries of ``T`` and ``S`` move into the freed slots;
        returns the old last index so callers can mirror the move.
        """
        B = self.inv
        piv = B[pos, k]
        self._check(piv)
        # Schur deletion zeroes row pos and column k of the update
        self._ger(-1.0 / piv, B[:, k].copy(), B[pos, :].copy())
        last = len(self.T) - 1
        buf = self.buf
        buf[pos, :last + 1] = buf[last, :last + 1]
        buf[:last + 1, k] = buf[:last + 1, last]
        self.T[k] = self.T[last]
        self.S[pos] = self.S[last]
        self.T.pop()
        self.S.pop()
        self._tick()
        return last


def homotopy_path(sigma, d, tau, max_steps, relax_factor, w, y,
                  pivot_rtol, ray_rtol, refresh=50):
    """Follow the l1 solution path from ``tau = ||d||_inf`` down to ``tau``.

    On each segment the support ``S`` (signs ``g``) and the tight set ``T``
    (signs ``s``) have equal size, the primal solves
    ``sigma[T, S] w_S = d_T + tau s`` (linear in tau) and the dual solves
    ``sigma[S, T] y_T = -g`` (constant). Breakpoints are a coefficient
    reaching zero or a slack constraint becoming tight; each triggers a
    dual ratio test choosing the entering coefficient or the constraint
    that leaves the tight set.

    Returns
    -------
    status : int
        ``OK`` (``w``, ``y`` hold the solution), ``RAY`` (the ratio test
        is unbounded at level ``t``), or a failure code.
    steps : int
    t : float
        Path level reached.
    ray : array or None
        Dual direction when ``status == RAY``.
    relaxed : bool
        With ``RAY``: ``w``, ``y`` hold the path solution at
        ``relax_factor * t`` (available when that level lies on the last
        segment).
    """
    m = d.shape[0]
    w[:] = 0.0
    y[:] = 0.0
    i0 = int(np.argmax(np.abs(d)))
    t = float(abs(d[i0]))
    if tau >= t:
        return OK, 0, t, None, False
    big = max(1.0, float(np.max(np.abs(sigma))))
    tiny = 1e-13 * big

    act = _ActiveInverse(sigma, refresh)
    g, s = [], []
    yT = np.zeros(0)
    a = b = np.zeros(0)
    t_top = np.inf
    event = ("join", i0, -np.sign(d[i0]))
    vecs = np.zeros((m, 2))

    try:
        for step in range(1, max_steps + 1):
            T, S = act.T, act.S
            # ---- pivot: dual ratio test
            if event[0] == "join":
                _, i, si = event
                dT = -(act.inv.T @ (sigma[S, i] * si)) if S else np.zeros(0)
                Tn = T + [i]
                sn = s + [si]
                delta = np.append(dT, si)
                y2 = np.append(yT, 0.0)
                free_cols = S
            else:
                _, pos = event
                delta = act.inv[pos, :] * g[pos]
                Tn, sn, y2 = T, s, yT
                free_cols = S[:pos] + S[pos + 1:]

            vecs[:] = 0.0
            vecs[Tn, 0] = y2
            vecs[Tn, 1] = delta
            qh = sigma @ vecs
            qv, hv = qh[:, 0], qh[:, 1]
            theta = np.full(m, np.inf)
            # an entering column's |h| is its pivot in the updated block, so
            # near-zero entries are skipped rather than risk a singular block;
            # the floor scales with ||sigma|| ||delta||_1, the rounding in hv
            h_tol = max(tiny, pivot_rtol * float(np.max(np.abs(hv))),
                        ray_rtol * big * float(np.abs(delta).sum()))
            pos_h = hv > h_tol
            neg_h = hv < -h_tol
            theta[pos_h] = (1.0 - qv[pos_h]) / hv[pos_h]
            theta[neg_h] = (-1.0 - qv[neg_h]) / hv[neg_h]
            if free_cols:
                theta[free_cols] = np.inf
            theta = np.maximum(theta, 0.0)
            j_enter = int(np.argmin(theta))
            theta_w = theta[j_enter]

            s2a = np.asarray(sn, dtype=float)
            shrinking = delta * s2a < -max(tiny, pivot_rtol * float(np.max(np.abs(delta))))
            theta_c = np.full(len(Tn), np.inf)
            theta_c[shrinking] = np.maximum(-y2[shrinking] / delta[shrinking], 0.0)
            k_leave = int(np.argmin(theta_c))
            theta_t = theta_c[k_leave]

            if not np.isfinite(min(theta_w, theta_t)):
                ray = np.zeros(m)
                ray[Tn] = delta
                tr = relax_factor * t
                relaxed = bool(S) and tr <= t_top
                if relaxed:
                    w[S] = a + tr * b
                    y[T] = yT
                return RAY, step, t, ray, relaxed
            enter = theta_w <= theta_t
            new_sign = -np.sign(qv[j_enter] + theta_w * hv[j_enter]) if enter else 0.0
            if event[0] == "join":
                if enter:
                    act.grow(i, j_enter)
                    g.append(new_sign)
                    s.append(si)
                else:
                    act.replace_row(k_leave, i)
                    s[k_leave] = si
            else:
                if enter:
                    act.replace_col(pos, j_enter)
                    g[pos] = new_sign
                else:
                    last = act.shrink(k_leave, pos)
                    s[k_leave] = s[last]
                    s.pop()
                    g[pos] = g[last]
                    g.pop()
            T, S = act.T, act.S
            if not S:
                return EMPTY, step, t, None, False

            # ---- primal path on the new segment
            sa = np.asarray(s, dtype=float)
            ga = np.asarray(g, dtype=float)
            B = act.inv
            a = B @ d[T]
            b = B @ sa
            yT = -(B.T @ ga)

            cand_t = -np.inf
            cand_event = None
            # coefficients shrinking toward zero as tau decreases
            toward = ga * b > 0
            if np.any(toward):
                tz = -a[toward] / b[toward]
                k = int(np.argmax(tz))
                cand_t = float(tz[k])
                cand_event = ("leave", int(np.flatnonzero(toward)[k]))
            # slack constraints becoming tight
            vecs[:] = 0.0
            vecs[S, 0] = a
            vecs[S, 1] = b
            ab = sigma @ vecs
            alpha = ab[:, 0] - d
            beta = ab[:, 1]
            free = np.ones(m, dtype=bool)
            free[T] = False
            up = free & (beta < 1.0 - 1e-12)
            dn = free & (beta > -1.0 + 1e-12)
            if np.any(up):
                tu = np.full(m, -np.inf)
                tu[up] = alpha[up] / (1.0 - beta[up])
                k = int(np.argmax(tu))
                if tu[k] > cand_t:
                    cand_t = float(tu[k])
                    cand_event = ("join", k, 1.0)
            if np.any(dn):
                td = np.full(m, -np.inf)
                td[dn] = -alpha[dn] / (1.0 + beta[dn])
                k = int(np.argmax(td))
                if td[k] > cand_t:
                    cand_t = float(td[k])
                    cand_event = ("join", k, -1.0)

            if cand_event is None or cand_t <= tau:
                # a fresh factorization for the returned point
                act.rebuild()
                B = act.inv
                w[S] = B @ (d[T] + tau * sa)
                y[T] = -(B.T @ ga)
                return OK, step, tau, None, False
            t_top = t
            t = min(cand_t, t)
            event = cand_event
    except _Stop as stop:
        return stop.status, step, t, None, False
    return MAX_STEPS, max_steps, t, None, False
