# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled INGARCH window kernels.

Mirror of :mod:`countbreak._pykernels`; see that module for the calling
conventions.  Every loop here follows the Python reference line by line so
that both backends produce the same iterates up to floating-point
reassociation.
"""

import numpy as np

from libc.math cimport log, sqrt, fabs, INFINITY
from libc.stdlib cimport malloc, free
from libc.string cimport memset, memcpy

BACKEND = "compiled"

cdef double _ARMIJO = 1e-4
cdef int _MAX_HALVINGS = 40


cdef void _presample(const double* th, int p, int q, int presample, int d,
                     double* lam0, double* g0, double* h0) noexcept nogil:
    cdef int j, k, b
    cdef double sb = 0.0, one_m
    memset(g0, 0, d * sizeof(double))
    memset(h0, 0, d * d * sizeof(double))
    if presample == 1 or q == 0:
        lam0[0] = 0.0 if presample == 1 else th[0]
        return
    for j in range(q):
        sb += th[1 + p + j]
    one_m = 1.0 - sb
    lam0[0] = th[0] / one_m
    g0[0] = 1.0 / one_m
    for j in range(q):
        g0[1 + p + j] = lam0[0] / one_m
    for j in range(q):
        b = 1 + p + j
        h0[b] = 1.0 / (one_m * one_m)
        h0[b * d] = 1.0 / (one_m * one_m)
        for k in range(q):
            h0[b * d + 1 + p + k] = 2.0 * th[0] / (one_m * one_m * one_m)


cdef inline Py_ssize_t _ws_size(int p, int q) noexcept nogil:
    cdef int d = 1 + p + q
    return q + q * d + q * d * d + 2 * d + 2 * d * d


cdef double _pass(const double* y, Py_ssize_t t0, Py_ssize_t lo, Py_ssize_t hi,
                  const double* th, int p, int q, int presample, int order,
                  double* score, double* jsum, double* isum, double* nh,
                  double* lam_out, double* g_out, double* h_out,
                  double* ws) noexcept nogil:
    """One sweep of the recursion from ``t0`` to ``hi``.

    Accumulators that are NULL are skipped.  Returns the quasi-log-likelihood
    over ``lo..hi``.
    """
    cdef int d = 1 + p + q
    cdef int dd = d * d
    cdef double* lam_hist = ws
    cdef double* g_hist = lam_hist + q
    cdef double* h_hist = g_hist + q * d
    cdef double* g = h_hist + q * dd
    cdef double* h = g + d
    cdef double* g0 = h + dd
    cdef double* h0 = g0 + d
    cdef double lam0, lam, yt, r, w, w2, gg, bj
    cdef double ll = 0.0
    cdef int head = 0
    cdef int i, j, a, b, slot, col
    cdef Py_ssize_t t, s, o

    _presample(th, p, q, presample, d, &lam0, g0, h0)
    for j in range(q):
        lam_hist[j] = lam0
        memcpy(g_hist + j * d, g0, d * sizeof(double))
        if order >= 2:
            memcpy(h_hist + j * dd, h0, dd * sizeof(double))
    if score != NULL:
        memset(score, 0, d * sizeof(double))
    if jsum != NULL:
        memset(jsum, 0, dd * sizeof(double))
        memset(isum, 0, dd * sizeof(double))
    if nh != NULL:
        memset(nh, 0, dd * sizeof(double))

    for t in range(t0, hi + 1):
        lam = th[0]
        for i in range(p):
            s = t - 1 - i
            if s >= t0:
                lam += th[1 + i] * y[s]
        for j in range(q):
            lam += th[1 + p + j] * lam_hist[(head + j) % q]
        if order >= 1:
            memset(g, 0, d * sizeof(double))
            g[0] = 1.0
            for i in range(p):
                s = t - 1 - i
                if s >= t0:
                    g[1 + i] = y[s]
            for j in range(q):
                g[1 + p + j] = lam_hist[(head + j) % q]
            for j in range(q):
                bj = th[1 + p + j]
                slot = (head + j) % q
                for a in range(d):
                    g[a] += bj * g_hist[slot * d + a]
        if order >= 2:
            memset(h, 0, dd * sizeof(double))
            for j in range(q):
                bj = th[1 + p + j]
                slot = (head + j) % q
                for a in range(dd):
                    h[a] += bj * h_hist[slot * dd + a]
                col = 1 + p + j
                for a in range(d):
                    h[col * d + a] += g_hist[slot * d + a]
                    h[a * d + col] += g_hist[slot * d + a]

        if t >= lo:
            o = t - lo
            yt = y[t]
            if yt > 0.0:
                ll += yt * log(lam) - lam
            else:
                ll -= lam
            if lam_out != NULL:
                lam_out[o] = lam
            if g_out != NULL:
                memcpy(g_out + o * d, g, d * sizeof(double))
            if h_out != NULL:
                memcpy(h_out + o * dd, h, dd * sizeof(double))
            if order >= 1:
                r = yt / lam - 1.0
                if score != NULL:
                    for a in range(d):
                        score[a] += r * g[a]
                if jsum != NULL:
                    w = 1.0 / lam
                    w2 = r * r
                    for a in range(d):
                        for b in range(a + 1):
                            gg = g[a] * g[b]
                            jsum[a * d + b] += w * gg
                            isum[a * d + b] += w2 * gg
                if nh != NULL:
                    w = yt / (lam * lam)
                    for a in range(d):
                        for b in range(a + 1):
                            nh[a * d + b] += w * g[a] * g[b] - r * h[a * d + b]

        if q > 0:
            head = (head - 1 + q) % q
            lam_hist[head] = lam
            if order >= 1:
                memcpy(g_hist + head * d, g, d * sizeof(double))
            if order >= 2:
                memcpy(h_hist + head * dd, h, dd * sizeof(double))

    for a in range(d):
        for b in range(a):
            if jsum != NULL:
                jsum[b * d + a] = jsum[a * d + b]
                isum[b * d + a] = isum[a * d + b]
            if nh != NULL:
                nh[b * d + a] = nh[a * d + b]
    return ll


def mean_paths(y, Py_ssize_t t0, Py_ssize_t lo, Py_ssize_t hi, theta,
               int p, int q, int presample, int order):
    cdef int d = 1 + p + q
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef Py_ssize_t n_out = hi - lo + 1
    lam = np.empty(n_out)
    gout = np.empty((n_out, d)) if order >= 1 else None
    hout = np.empty((n_out, d, d)) if order >= 2 else None
    cdef double[::1] lv = lam
    cdef double[:, ::1] gv
    cdef double[:, :, ::1] hv
    cdef double* gp = NULL
    cdef double* hp = NULL
    if order >= 1:
        gv = gout
        gp = &gv[0, 0]
    if order >= 2:
        hv = hout
        hp = &hv[0, 0, 0]
    cdef double* ws = <double*> malloc(_ws_size(p, q) * sizeof(double))
    if ws == NULL:
        raise MemoryError()
    try:
        _pass(&yv[0], t0, lo, hi, &th[0], p, q, presample, order,
              NULL, NULL, NULL, NULL, &lv[0], gp, hp, ws)
    finally:
        free(ws)
    return lam, gout, hout


def window_stats(y, Py_ssize_t t0, Py_ssize_t lo, Py_ssize_t hi, theta,
                 int p, int q, int presample, bint want_hess):
    cdef int d = 1 + p + q
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    score = np.zeros(d)
    jsum = np.zeros((d, d))
    isum = np.zeros((d, d))
    nh = np.zeros((d, d)) if want_hess else None
    cdef double[::1] sv = score
    cdef double[:, ::1] jv = jsum
    cdef double[:, ::1] iv = isum
    cdef double[:, ::1] nv
    cdef double* np_ = NULL
    if want_hess:
        nv = nh
        np_ = &nv[0, 0]
    cdef double ll
    cdef double* ws = <double*> malloc(_ws_size(p, q) * sizeof(double))
    if ws == NULL:
        raise MemoryError()
    try:
        ll = _pass(&yv[0], t0, lo, hi, &th[0], p, q, presample,
                   2 if want_hess else 1,
                   &sv[0], &jv[0, 0], &iv[0, 0], np_, NULL, NULL, NULL, ws)
    finally:
        free(ws)
    return ll, score, jsum, isum, nh


# ---------------------------------------------------------------------------
# projected quasi-Newton

cdef void _project(double* x, int p, int q, double a0_min, double a0_max,
                   double cap, double* tmp) noexcept nogil:
    cdef int k = p + q
    cdef int i, j
    cdef double v, css, cand, tau, s
    if x[0] < a0_min:
        x[0] = a0_min
    elif x[0] > a0_max:
        x[0] = a0_max
    if k == 0:
        return
    s = 0.0
    for i in range(k):
        v = x[1 + i]
        if v < 0.0:
            v = 0.0
        x[1 + i] = v
        s += v
    if s <= cap:
        return
    # sorted copy, descending (insertion sort; k is tiny)
    for i in range(k):
        v = x[1 + i]
        j = i - 1
        while j >= 0 and tmp[j] < v:
            tmp[j + 1] = tmp[j]
            j -= 1
        tmp[j + 1] = v
    css = 0.0
    tau = 0.0
    for j in range(k):
        css += tmp[j]
        cand = (css - cap) / (j + 1)
        if tmp[j] - cand > 0.0:
            tau = cand
    for i in range(k):
        v = x[1 + i] - tau
        x[1 + i] = v if v > 0.0 else 0.0


cdef int _cholesky_solve(const double* a, const double* b, double* x, int n,
                         double* lmat, double* z) noexcept nogil:
    """Solve ``a x = b`` (row-major n-by-n SPD).  Returns 0 if not SPD."""
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(i + 1):
            s = a[i * n + j]
            for k in range(j):
                s -= lmat[i * n + k] * lmat[j * n + k]
            if i == j:
                if not (s > 0.0) or s == INFINITY:
                    return 0
                lmat[i * n + i] = sqrt(s)
            else:
                lmat[i * n + j] = s / lmat[j * n + j]
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= lmat[i * n + k] * z[k]
        z[i] = s / lmat[i * n + i]
    for i in range(n - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, n):
            s -= lmat[k * n + i] * x[k]
        x[i] = s / lmat[i * n + i]
    return 1


cdef double _evaluate(const double* y, Py_ssize_t t0, Py_ssize_t lo, Py_ssize_t hi,
                      const double* x, int p, int q, int presample, double nobs,
                      double* g, double* jsum, double* isum, double* ws) noexcept nogil:
    cdef int d = 1 + p + q
    cdef int a
    cdef double ll = _pass(y, t0, lo, hi, x, p, q, presample, 1,
                           g, jsum, isum, NULL, NULL, NULL, NULL, ws)
    for a in range(d):
        g[a] = -g[a] / nobs
    return -ll / nobs


cdef int _fit(const double* y, Py_ssize_t t0, Py_ssize_t lo, Py_ssize_t hi,
              int p, int q, int presample, double* x,
              double a0_min, double a0_max, double cap, double tol, int max_iter,
              double* f_out, double* pgn_out, int* conv_out, double* buf) noexcept nogil:
    cdef int d = 1 + p + q
    cdef int dd = d * d
    cdef double nobs = <double>(hi - lo + 1)
    # buffer layout
    cdef double* ws = buf
    cdef double* g = ws + _ws_size(p, q)
    cdef double* gt = g + d
    cdef double* xt = gt + d
    cdef double* xg = xt + d
    cdef double* dx = xg + d
    cdef double* direction = dx + d
    cdef double* yk = direction + d
    cdef double* bs = yk + d
    cdef double* rhs = bs + d
    cdef double* sol = rhs + d
    cdef double* z = sol + d
    cdef double* tmp = z + d
    cdef double* bmat = tmp + d
    cdef double* jsum = bmat + dd
    cdef double* isum = jsum + dd
    cdef double* sub = isum + dd
    cdef double* lmat = sub + dd
    cdef int* free_idx = <int*> (lmat + dd)
    cdef int* active = free_idx + d

    cdef double f, ft = 0.0, pgn, eps, gd, step, tr, ridge, sy, sbs, ny, ns
    cdef int a, c, c2, n_iter, nfree, nfb, nred, piv, k, attempt, halving, accepted, ok, on_face
    cdef double sfb, gfb, za, zc, top
    cdef int converged = 0

    _project(x, p, q, a0_min, a0_max, cap, tmp)
    f = _evaluate(y, t0, lo, hi, x, p, q, presample, nobs, g, jsum, isum, ws)
    tr = 0.0
    for a in range(d):
        for c in range(d):
            bmat[a * d + c] = jsum[a * d + c] / nobs
        tr += bmat[a * d + a]
    ridge = 1e-8 * tr / d + 1e-12
    for a in range(d):
        bmat[a * d + a] += ridge

    pgn = INFINITY
    n_iter = 0
    while True:
        for a in range(d):
            xg[a] = x[a] - g[a]
        _project(xg, p, q, a0_min, a0_max, cap, tmp)
        pgn = 0.0
        for a in range(d):
            if fabs(x[a] - xg[a]) > pgn:
                pgn = fabs(x[a] - xg[a])
        if pgn <= tol:
            converged = 1
            break
        if n_iter == max_iter:
            break
        eps = pgn if pgn < 1e-3 else 1e-3
        nfree = 0
        nfb = 0
        piv = -1
        sfb = 0.0
        gfb = 0.0
        for a in range(d):
            if a == 0:
                active[a] = (x[a] <= a0_min + eps and g[a] > 0.0) or (x[a] >= a0_max - eps and g[a] < 0.0)
            else:
                sfb += x[a]
                active[a] = x[a] <= eps and g[a] > 0.0
            if not active[a]:
                free_idx[nfree] = a
                nfree += 1
                if a > 0:
                    nfb += 1
                    gfb += g[a]
                    if piv < 0 or x[a] > x[piv]:
                        piv = a
            direction[a] = -g[a] / bmat[a * d + a]
        # hold the face sum(feedback) = cap while the gradient pushes outwards
        on_face = nfb > 0 and sfb >= cap - eps and gfb < 0.0
        if on_face:
            nred = 0
            for k in range(nfree):
                if free_idx[k] != piv:
                    free_idx[nred] = free_idx[k]
                    nred += 1
            for k in range(nred):
                a = free_idx[k]
                za = 1.0 if a > 0 else 0.0
                rhs[k] = -(g[a] - za * g[piv])
                for c2 in range(nred):
                    c = free_idx[c2]
                    zc = 1.0 if c > 0 else 0.0
                    sub[k * nred + c2] = (bmat[a * d + c] - zc * bmat[a * d + piv]
                                          - za * bmat[piv * d + c] + za * zc * bmat[piv * d + piv])
            ok = 1
            if nred > 0:
                ok = _cholesky_solve(sub, rhs, sol, nred, lmat, z)
            if ok:
                direction[piv] = 0.0
                for k in range(nred):
                    a = free_idx[k]
                    direction[a] = sol[k]
                    if a > 0:
                        direction[piv] -= sol[k]
        else:
            for k in range(nfree):
                rhs[k] = -g[free_idx[k]]
                for c2 in range(nfree):
                    sub[k * nfree + c2] = bmat[free_idx[k] * d + free_idx[c2]]
            ok = 1
            if nfree > 0:
                ok = _cholesky_solve(sub, rhs, sol, nfree, lmat, z)
            if ok:
                for k in range(nfree):
                    direction[free_idx[k]] = sol[k]

        accepted = 0
        for attempt in range(3):
            step = 1.0
            for halving in range(_MAX_HALVINGS):
                for a in range(d):
                    xt[a] = x[a] + step * direction[a]
                _project(xt, p, q, a0_min, a0_max, cap, tmp)
                gd = 0.0
                for a in range(d):
                    dx[a] = xt[a] - x[a]
                    gd += g[a] * dx[a]
                if gd < 0.0:
                    ft = _evaluate(y, t0, lo, hi, xt, p, q, presample, nobs, gt, NULL, NULL, ws)
                    if ft <= f + _ARMIJO * gd:
                        accepted = 1
                        break
                step *= 0.5
            if accepted:
                break
            # fall back to a diagonally scaled, then a plain projected gradient step
            top = 0.0
            for a in range(d):
                if bmat[a * d + a] > top:
                    top = bmat[a * d + a]
            for a in range(d):
                direction[a] = -g[a] / (bmat[a * d + a] if attempt == 0 else top)
        if not accepted:
            break

        sy = 0.0
        sbs = 0.0
        ny = 0.0
        ns = 0.0
        for a in range(d):
            yk[a] = gt[a] - g[a]
            sy += dx[a] * yk[a]
            ny += yk[a] * yk[a]
            ns += dx[a] * dx[a]
        for a in range(d):
            bs[a] = 0.0
            for c in range(d):
                bs[a] += bmat[a * d + c] * dx[c]
            sbs += dx[a] * bs[a]
        if sy > 1e-12 * sqrt(ns * ny) and sbs > 0.0:
            for a in range(d):
                for c in range(d):
                    bmat[a * d + c] += yk[a] * yk[c] / sy - bs[a] * bs[c] / sbs
        for a in range(d):
            x[a] = xt[a]
            g[a] = gt[a]
        f = ft
        n_iter += 1

    f_out[0] = f
    pgn_out[0] = pgn
    conv_out[0] = converged
    return n_iter


def fit_window(y, Py_ssize_t t0, Py_ssize_t lo, Py_ssize_t hi, int p, int q,
               int presample, x0, double a0_min, double a0_max, double cap,
               double tol, int max_iter):
    cdef int d = 1 + p + q
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    x = np.array(x0, dtype=np.float64, copy=True)
    cdef double[::1] xv = x
    cdef Py_ssize_t nbuf = _ws_size(p, q) + 12 * d + 5 * d * d + d + 2
    cdef double* buf = <double*> malloc(nbuf * sizeof(double))
    cdef double f = 0.0, pgn = 0.0
    cdef int conv = 0, n_iter
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            n_iter = _fit(&yv[0], t0, lo, hi, p, q, presample, &xv[0],
                          a0_min, a0_max, cap, tol, max_iter, &f, &pgn, &conv, buf)
    finally:
        free(buf)
    nobs = float(hi - lo + 1)
    return x, -f * nobs, n_iter, bool(conv), pgn * nobs
