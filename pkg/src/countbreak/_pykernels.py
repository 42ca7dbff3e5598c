"""Pure-Python implementation of the INGARCH window kernels.

This module is the reference implementation and the import-time fallback
for :mod:`countbreak._ckernels`.  Both modules expose the same three
functions with the same argument order:

``mean_paths(y, t0, lo, hi, theta, p, q, presample, order)``
    Conditional mean path (and its first/second parameter derivatives)
    on positions ``lo..hi`` with the past before ``t0`` truncated.
``window_stats(y, t0, lo, hi, theta, p, q, presample, want_hess)``
    Poisson quasi-log-likelihood, score, the outer-product sums behind
    the J and I matrices and, optionally, the negative Hessian.
``fit_window(y, t0, lo, hi, p, q, presample, x0, a0_min, a0_max, cap, tol, max_iter)``
    Projected quasi-Newton maximisation of the quasi-log-likelihood.

Positions are 0-based offsets into ``y``.  ``theta`` is laid out as
``(alpha0, alpha_1..alpha_p, beta_1..beta_q)``.  ``presample`` is 0 for
the fixed-point convention (``lambda = alpha0 / (1 - sum(beta))`` before
``t0``) and 1 for the zero convention.

The code is written with plain lists on purpose: for the tiny parameter
dimensions involved, list arithmetic is several times faster than numpy.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"

# Armijo constant and maximum number of step halvings per arc search.
_ARMIJO = 1e-4
_MAX_HALVINGS = 40


def _presample_state(theta, p, q, presample):
    d = 1 + p + q
    if presample == 1 or q == 0:
        lam0 = 0.0 if presample == 1 else theta[0]
        return lam0, [0.0] * d, [[0.0] * d for _ in range(d)]
    sb = sum(theta[1 + p:])
    one_m = 1.0 - sb
    lam0 = theta[0] / one_m
    g0 = [0.0] * d
    g0[0] = 1.0 / one_m
    for j in range(q):
        g0[1 + p + j] = lam0 / one_m
    h0 = [[0.0] * d for _ in range(d)]
    for j in range(q):
        b = 1 + p + j
        h0[0][b] = h0[b][0] = 1.0 / (one_m * one_m)
        for k in range(q):
            h0[b][1 + p + k] = 2.0 * theta[0] / (one_m ** 3)
    return lam0, g0, h0


def _recursion(y, t0, hi, theta, p, q, presample, order):
    """Yield ``(t, lam, grad, hess)`` for every position ``t0..hi``."""
    d = 1 + p + q
    a0 = theta[0]
    alphas = theta[1:1 + p]
    betas = theta[1 + p:]
    lam0, g0, h0 = _presample_state(theta, p, q, presample)
    # most recent first
    lam_hist = [lam0] * q
    g_hist = [list(g0) for _ in range(q)]
    h_hist = [[row[:] for row in h0] for _ in range(q)] if order >= 2 else None
    for t in range(t0, hi + 1):
        lam = a0
        for i in range(p):
            s = t - 1 - i
            if s >= t0:
                lam += alphas[i] * y[s]
        for j in range(q):
            lam += betas[j] * lam_hist[j]
        g = None
        h = None
        if order >= 1:
            g = [0.0] * d
            g[0] = 1.0
            for i in range(p):
                s = t - 1 - i
                if s >= t0:
                    g[1 + i] = y[s]
            for j in range(q):
                g[1 + p + j] = lam_hist[j]
            for j in range(q):
                bj = betas[j]
                gj = g_hist[j]
                for a in range(d):
                    g[a] += bj * gj[a]
        if order >= 2:
            h = [[0.0] * d for _ in range(d)]
            for j in range(q):
                bj = betas[j]
                hj = h_hist[j]
                for a in range(d):
                    row = h[a]
                    hrow = hj[a]
                    for b in range(d):
                        row[b] += bj * hrow[b]
                col = 1 + p + j
                gj = g_hist[j]
                for a in range(d):
                    h[col][a] += gj[a]
                    h[a][col] += gj[a]
        yield t, lam, g, h
        if q:
            lam_hist.insert(0, lam)
            lam_hist.pop()
            if order >= 1:
                g_hist.insert(0, g)
                g_hist.pop()
            if order >= 2:
                h_hist.insert(0, h)
                h_hist.pop()


def mean_paths(y, t0, lo, hi, theta, p, q, presample, order):
    y = [float(v) for v in y]
    theta = [float(v) for v in theta]
    d = 1 + p + q
    n_out = hi - lo + 1
    lam_out = np.empty(n_out)
    g_out = np.empty((n_out, d)) if order >= 1 else None
    h_out = np.empty((n_out, d, d)) if order >= 2 else None
    for t, lam, g, h in _recursion(y, t0, hi, theta, p, q, presample, order):
        if t < lo:
            continue
        i = t - lo
        lam_out[i] = lam
        if order >= 1:
            g_out[i] = g
        if order >= 2:
            h_out[i] = h
    return lam_out, g_out, h_out


def _stats(y, t0, lo, hi, theta, p, q, presample, want_score, want_info, want_hess):
    d = 1 + p + q
    ll = 0.0
    score = [0.0] * d
    jsum = [[0.0] * d for _ in range(d)]
    isum = [[0.0] * d for _ in range(d)]
    nh = [[0.0] * d for _ in range(d)]
    order = 2 if want_hess else (1 if (want_score or want_info) else 0)
    for t, lam, g, h in _recursion(y, t0, hi, theta, p, q, presample, order):
        if t < lo:
            continue
        yt = y[t]
        if yt > 0.0:
            ll += yt * math.log(lam) - lam
        else:
            ll -= lam
        if order == 0:
            continue
        r = yt / lam - 1.0
        for a in range(d):
            score[a] += r * g[a]
        if want_info:
            w = 1.0 / lam
            w2 = r * r
            for a in range(d):
                ga = g[a]
                ja = jsum[a]
                ia = isum[a]
                for b in range(a + 1):
                    gg = ga * g[b]
                    ja[b] += w * gg
                    ia[b] += w2 * gg
        if want_hess:
            w = yt / (lam * lam)
            for a in range(d):
                ga = g[a]
                na = nh[a]
                ha = h[a]
                for b in range(a + 1):
                    na[b] += w * ga * g[b] - r * ha[b]
    for a in range(d):
        for b in range(a):
            jsum[b][a] = jsum[a][b]
            isum[b][a] = isum[a][b]
            nh[b][a] = nh[a][b]
    return ll, score, jsum, isum, nh


def window_stats(y, t0, lo, hi, theta, p, q, presample, want_hess):
    y = [float(v) for v in y]
    theta = [float(v) for v in theta]
    ll, score, jsum, isum, nh = _stats(
        y, t0, lo, hi, theta, p, q, presample, True, True, bool(want_hess)
    )
    return (
        ll,
        np.array(score),
        np.array(jsum),
        np.array(isum),
        np.array(nh) if want_hess else None,
    )


# ---------------------------------------------------------------------------
# projected quasi-Newton


def _project(x, p, q, a0_min, a0_max, cap):
    out = list(x)
    out[0] = min(max(out[0], a0_min), a0_max)
    k = p + q
    if k == 0:
        return out
    fb = [max(v, 0.0) for v in out[1:]]
    if sum(fb) > cap:
        u = sorted(fb, reverse=True)
        css = 0.0
        tau = 0.0
        for j in range(k):
            css += u[j]
            cand = (css - cap) / (j + 1)
            if u[j] - cand > 0.0:
                tau = cand
        fb = [max(v - tau, 0.0) for v in fb]
    out[1:] = fb
    return out


def _cholesky_solve(a, b):
    """Solve ``a x = b`` for a small SPD matrix; ``None`` if not SPD."""
    n = len(b)
    if n == 0:
        return []
    lmat = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1):
            s = a[i][j]
            for k in range(j):
                s -= lmat[i][k] * lmat[j][k]
            if i == j:
                if s <= 0.0 or not math.isfinite(s):
                    return None
                lmat[i][i] = math.sqrt(s)
            else:
                lmat[i][j] = s / lmat[j][j]
    z = [0.0] * n
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= lmat[i][k] * z[k]
        z[i] = s / lmat[i][i]
    x = [0.0] * n
    for i in range(n - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, n):
            s -= lmat[k][i] * x[k]
        x[i] = s / lmat[i][i]
    return x


def _curvature(jsum, nobs, d):
    b = [[jsum[a][c] / nobs for c in range(d)] for a in range(d)]
    tr = sum(b[a][a] for a in range(d)) / d
    ridge = 1e-8 * tr + 1e-12
    for a in range(d):
        b[a][a] += ridge
    return b


def fit_window(y, t0, lo, hi, p, q, presample, x0, a0_min, a0_max, cap, tol, max_iter):
    y = [float(v) for v in y]
    d = 1 + p + q
    nobs = float(hi - lo + 1)
    lb = [a0_min] + [0.0] * (p + q)
    ub = [a0_max] + [cap] * (p + q)

    def proj(v):
        return _project(v, p, q, a0_min, a0_max, cap)

    def evaluate(v, want_info):
        ll, sc, jsum, _, _ = _stats(y, t0, lo, hi, v, p, q, presample, True, want_info, False)
        return -ll / nobs, [-s / nobs for s in sc], jsum

    x = proj([float(v) for v in x0])
    f, g, jsum = evaluate(x, True)
    bmat = _curvature(jsum, nobs, d)
    n_iter = 0
    converged = False
    pgn = math.inf
    for n_iter in range(max_iter + 1):
        xg = proj([x[a] - g[a] for a in range(d)])
        pgn = max(abs(x[a] - xg[a]) for a in range(d))
        if pgn <= tol:
            converged = True
            break
        if n_iter == max_iter:
            break
        eps = min(pgn, 1e-3)
        active = [
            (x[0] <= lb[0] + eps and g[0] > 0.0) or (x[0] >= ub[0] - eps and g[0] < 0.0)
        ] + [x[a] <= eps and g[a] > 0.0 for a in range(1, d)]
        free = [a for a in range(d) if not active[a]]
        free_fb = [a for a in free if a > 0]
        # the simplex face sum(feedback) = cap is held as an equality while
        # the gradient pushes outwards; steps then move inside the face
        on_face = bool(free_fb) and sum(x[1:]) >= cap - eps and sum(g[a] for a in free_fb) < 0.0
        direction = [-g[a] / bmat[a][a] for a in range(d)]
        if on_face:
            piv = max(free_fb, key=lambda a: x[a])
            red = [a for a in free if a != piv]
            zc = [1.0 if a > 0 else 0.0 for a in red]
            sub = [
                [bmat[a][c] - zc[jc] * bmat[a][piv] - zc[ja] * bmat[piv][c]
                 + zc[ja] * zc[jc] * bmat[piv][piv] for jc, c in enumerate(red)]
                for ja, a in enumerate(red)
            ]
            sol = _cholesky_solve(sub, [-(g[a] - zc[ja] * g[piv]) for ja, a in enumerate(red)])
            if sol is not None:
                direction[piv] = -sum(zc[ja] * sol[ja] for ja in range(len(red)))
                for ja, a in enumerate(red):
                    direction[a] = sol[ja]
        else:
            sol = _cholesky_solve([[bmat[a][c] for c in free] for a in free], [-g[a] for a in free])
            if sol is not None:
                for ja, a in enumerate(free):
                    direction[a] = sol[ja]

        accepted = False
        for attempt in range(3):
            step = 1.0
            for _ in range(_MAX_HALVINGS):
                xt = proj([x[a] + step * direction[a] for a in range(d)])
                dx = [xt[a] - x[a] for a in range(d)]
                gd = sum(g[a] * dx[a] for a in range(d))
                if gd < 0.0:
                    ft, gt, jt = evaluate(xt, False)
                    if ft <= f + _ARMIJO * gd:
                        accepted = True
                        break
                step *= 0.5
            if accepted:
                break
            # fall back to a diagonally scaled, then a plain projected gradient step
            if attempt == 0:
                direction = [-g[a] / bmat[a][a] for a in range(d)]
            else:
                top = max(bmat[a][a] for a in range(d))
                direction = [-g[a] / top for a in range(d)]
        if not accepted:
            break

        yk = [gt[a] - g[a] for a in range(d)]
        sy = sum(dx[a] * yk[a] for a in range(d))
        bs = [sum(bmat[a][c] * dx[c] for c in range(d)) for a in range(d)]
        sbs = sum(dx[a] * bs[a] for a in range(d))
        if sy > 1e-12 * math.sqrt(sum(v * v for v in dx) * sum(v * v for v in yk)) and sbs > 0.0:
            for a in range(d):
                for c in range(d):
                    bmat[a][c] += yk[a] * yk[c] / sy - bs[a] * bs[c] / sbs
        x, f, g = xt, ft, gt
    return np.array(x), -f * nobs, n_iter, converged, pgn * nobs
