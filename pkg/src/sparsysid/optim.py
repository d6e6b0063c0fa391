"""Bound-constrained limited-memory BFGS and projected Adam.

``lbfgsb_minimize`` follows the classical L-BFGS-B scheme: a generalized
Cauchy point along the projected steepest-descent path, minimization of the
limited-memory quadratic model over the free variables (direct primal
method with the compact representation ``B = theta I - W M W'``), and a
strong-Wolfe line search along the resulting feasible direction.

Objectives are callables ``x -> (f, g)``.  Raising ``FloatingPointError`` or
returning a non-finite value marks a trial point as infeasible; the line
search then backtracks.
"""
from collections import deque
from dataclasses import dataclass

import numpy as np

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class LbfgsbOptions:
    memory: int = 10
    max_fun_evals: int = 1000
    max_iters: int = 100000
    grad_tol: float = 1e-8
    ftol: float = 1e-10
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_evals: int = 20

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if not (self.grad_tol > 0 and self.ftol > 0):
            raise ValueError("tolerances must be > 0")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass(frozen=True)
class AdamOptions:
    iters: int = 1000
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    track_best: bool = True
    max_nonfinite: int = 50

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")


@dataclass
class SolveResult:
    x_opt: np.ndarray
    f_opt: float
    n_fun_evals: int
    n_iters: int
    status: str
    projected_grad_norm: float


class _Counter:
    """Wraps an objective: counts calls, maps failures to ``inf``."""

    def __init__(self, fun, lower, upper):
        self.fun = fun
        self.lower = lower
        self.upper = upper
        self.n = 0

    def __call__(self, x):
        x = np.minimum(np.maximum(x, self.lower), self.upper)
        self.n += 1
        try:
            f, g = self.fun(x)
        except FloatingPointError:
            return x, np.inf, None
        f = float(f)
        if not np.isfinite(f) or g is None or not np.all(np.isfinite(g)):
            return x, np.inf, None
        return x, f, np.asarray(g, dtype=float)


def _bounds(x0, lower, upper):
    n = np.size(x0)
    lo = np.full(n, -np.inf) if lower is None else np.broadcast_to(
        np.asarray(lower, dtype=float), (n,)).copy()
    hi = np.full(n, np.inf) if upper is None else np.broadcast_to(
        np.asarray(upper, dtype=float), (n,)).copy()
    if np.any(lo > hi):
        raise ValueError("lower bound exceeds upper bound")
    return lo, hi


def projected_gradient(x, g, lower, upper):
    return np.minimum(np.maximum(x - g, lower), upper) - x


def _compact(S, Y):
    """``theta, W, M`` of the compact form ``B = theta I - W M W'``."""
    Sm = np.array(S).T
    Ym = np.array(Y).T
    s, y = S[-1], Y[-1]
    theta = float(y @ y) / float(s @ y)
    SY = Sm.T @ Ym
    Dd = np.diag(np.diag(SY))
    L = np.tril(SY, -1)
    mid = np.block([[-Dd, L.T], [L, theta * (Sm.T @ Sm)]])
    M = np.linalg.inv(mid)
    W = np.hstack([Ym, theta * Sm])
    return theta, W, M


def _cauchy_point(x, g, lo, hi, theta, W, M):
    """Generalized Cauchy point and ``c = W'(xc - x)``."""
    n = x.size
    m2 = W.shape[1]
    t = np.full(n, np.inf)
    neg = g < 0
    pos = g > 0
    with np.errstate(invalid="ignore"):
        t[neg] = (x[neg] - hi[neg]) / g[neg]
        t[pos] = (x[pos] - lo[pos]) / g[pos]
    d = np.where(t > 0, -g, 0.0)
    xc = x.copy()
    c = np.zeros(m2)
    if not np.any(d):
        return xc, c
    p = W.T @ d
    fp = -float(d @ d)
    fpp = -theta * fp - float(p @ (M @ p))
    fpp0 = fpp
    dtm = -fp / fpp
    cand = np.flatnonzero((t > 0) & np.isfinite(t))
    order = cand[np.argsort(t[cand], kind="stable")]
    told = 0.0
    for b in order:
        tb = t[b]
        dt = tb - told
        if dtm < dt:
            break
        xc[b] = hi[b] if d[b] > 0 else lo[b]
        zb = xc[b] - x[b]
        c += dt * p
        gb = g[b]
        wb = W[b]
        Mw = M @ wb
        fp += dt * fpp + gb * gb + theta * gb * zb - gb * float(Mw @ c)
        fpp += -theta * gb * gb - 2.0 * gb * float(Mw @ p) - gb * gb * float(Mw @ wb)
        fpp = max(_EPS * fpp0, fpp)
        p += gb * wb
        d[b] = 0.0
        dtm = -fp / fpp
        told = tb
    dtm = max(dtm, 0.0)
    told += dtm
    moving = d != 0
    xc[moving] = x[moving] + told * d[moving]
    xc = np.minimum(np.maximum(xc, lo), hi)
    c += dtm * p
    return xc, c


def _subspace_min(x, g, lo, hi, xc, c, theta, W, M):
    """Minimize the quadratic model over variables free at ``xc``."""
    free = (xc > lo) & (xc < hi)
    xbar = xc.copy()
    if not np.any(free):
        return xbar
    rc = g[free] + theta * (xc[free] - x[free])
    if W.shape[1]:
        WZ = W[free]
        rc = rc - WZ @ (M @ c)
        v = M @ (WZ.T @ rc)
        Nm = np.eye(W.shape[1]) - (M @ (WZ.T @ WZ)) / theta
        try:
            v = np.linalg.solve(Nm, v)
        except np.linalg.LinAlgError:
            return xbar
        du = -rc / theta - (WZ @ v) / theta ** 2
    else:
        du = -rc / theta
    # projected step first; fall back to truncation if it is not a descent direction
    proj = xbar.copy()
    proj[free] = np.minimum(np.maximum(xc[free] + du, lo[free]), hi[free])
    if float(g @ (proj - x)) < 0:
        return proj
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(du > 0, (hi[free] - xc[free]) / du,
                          np.where(du < 0, (lo[free] - xc[free]) / du, np.inf))
    alpha = min(1.0, float(np.min(ratios))) if ratios.size else 1.0
    xbar[free] = xc[free] + max(alpha, 0.0) * du
    return xbar


def _max_step(x, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(d > 0, (hi - x) / d, np.where(d < 0, (lo - x) / d, np.inf))
    return float(np.min(r)) if r.size else np.inf


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic interpolating two points with slopes, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def _line_search(ev, x, f0, g0, d, a0, amax, opts, budget):
    """Strong-Wolfe search on ``a -> f(x + a d)``, ``0 < a <= amax``.

    Returns ``(x, f, g, ok, approx)``.  ``ok`` is False (and the starting
    point is returned) when no acceptable point was found.  ``approx`` marks
    a step accepted by the approximate-Wolfe test: once the predicted
    decrease drops below the resolution of f, descent is certified by the
    slope at the trial point and f may change by roundoff only.
    """
    dg0 = float(g0 @ d)
    c1, c2 = opts.c1, opts.c2
    f_res = 10.0 * _EPS * abs(f0)
    evals = 0
    best = None  # (x, f, g, approx) of the lowest acceptable trial

    def accept_kind(a, fa, dga):
        if fa <= f0 + c1 * a * dg0:
            # a decrease below the resolution of f certifies nothing
            return "armijo" if f0 - fa > f_res else "approx"
        if (-a * dg0 <= 1e3 * f_res and fa <= f0 + f_res
                and dga <= (2.0 * c1 - 1.0) * dg0):
            return "approx"
        return None

    def trial(a):
        nonlocal evals, best
        evals += 1
        xa, fa, ga = ev(x + a * d)
        dga = float(ga @ d) if ga is not None else np.nan
        kind = accept_kind(a, fa, dga)
        if kind and (best is None or fa < best[1]):
            best = (xa, fa, ga, kind == "approx")
        return (xa, fa, ga, kind == "approx"), fa, dga, kind is not None

    def can_eval():
        return evals < opts.max_ls_evals and evals < budget

    def zoom(alo, flo, dlo, ahi, fhi, dhi):
        while can_eval():
            lo_b, hi_b = sorted((alo, ahi))
            span = hi_b - lo_b
            if span <= _EPS * max(1.0, hi_b):
                return None
            a = None
            if np.isfinite(fhi) and np.isfinite(dhi) and np.isfinite(dlo):
                a = _cubic_min(alo, flo, dlo, ahi, fhi, dhi)
            if a is None or not (lo_b + 0.1 * span <= a <= hi_b - 0.1 * span):
                a = 0.5 * (alo + ahi)
            pt, fa, dga, ok = trial(a)
            if not ok or fa > flo + f_res:
                ahi, fhi, dhi = a, fa, dga
            else:
                if abs(dga) <= -c2 * dg0:
                    return pt
                if dga * (ahi - alo) >= 0:
                    ahi, fhi, dhi = alo, flo, dlo
                alo, flo, dlo = a, fa, dga
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dg0
    a = min(a0, amax)
    result = None
    first = True
    while can_eval():
        pt, fa, dga, ok = trial(a)
        if not ok or (not first and fa > f_prev + f_res):
            result = zoom(a_prev, f_prev, d_prev, a, fa, dga)
            break
        if abs(dga) <= -c2 * dg0:
            result = pt
            break
        if dga >= 0:
            result = zoom(a, fa, dga, a_prev, f_prev, d_prev)
            break
        if a >= amax:
            result = pt
            break
        a_prev, f_prev, d_prev = a, fa, dga
        a = min(2.0 * a, amax)
        first = False
    if result is None:
        result = best
    if result is None:
        return x, f0, g0, False, False
    xa, fa, ga, approx = result
    return xa, fa, ga, True, approx


def lbfgsb_minimize(fun, x0, lower=None, upper=None, opts=None, callback=None):
    """Minimize ``fun`` subject to ``lower <= x <= upper``.

    Parameters
    ----------
    fun : callable
        ``x -> (f, g)``.
    x0 : array_like
        Starting point; clipped into the bounds.
    lower, upper : array_like or None
        Bounds (``-inf``/``inf`` allowed).
    opts : LbfgsbOptions, optional
    callback : callable, optional
        Called as ``callback(iteration, f, projected_grad_norm)`` after every
        accepted step.

    Returns
    -------
    SolveResult
        ``status`` is ``converged``, ``feval_budget`` or
        ``line_search_failure``.  The returned point is the best one accepted,
        so ``f_opt <= f(x0)``.
    """
    opts = opts or LbfgsbOptions()
    x0 = np.asarray(x0, dtype=float).ravel()
    lo, hi = _bounds(x0, lower, upper)
    ev = _Counter(fun, lo, hi)
    x, f, g = ev(x0)
    if g is None:
        raise FloatingPointError("objective is not finite at the starting point")
    S = deque(maxlen=opts.memory)
    Y = deque(maxlen=opts.memory)
    it = 0
    status = "converged"
    while True:
        pg = float(np.max(np.abs(projected_gradient(x, g, lo, hi)), initial=0.0))
        if pg <= opts.grad_tol:
            status = "converged"
            break
        if ev.n >= opts.max_fun_evals:
            status = "feval_budget"
            break
        if it >= opts.max_iters:
            status = "feval_budget"
            break
        if S:
            theta, W, M = _compact(S, Y)
        else:
            theta, W, M = 1.0, np.zeros((x.size, 0)), np.zeros((0, 0))
        xc, c = _cauchy_point(x, g, lo, hi, theta, W, M)
        xbar = _subspace_min(x, g, lo, hi, xc, c, theta, W, M)
        d = xbar - x
        dg = float(g @ d)
        if not dg < 0:
            if S:
                S.clear()
                Y.clear()
                continue
            status = "converged"
            break
        amax = _max_step(x, d, lo, hi)
        a0 = 1.0 if S else min(1.0 / max(np.linalg.norm(d), _EPS), amax)
        budget = opts.max_fun_evals - ev.n
        xn, fn, gn, ok, approx = _line_search(ev, x, f, g, d, a0, amax, opts, budget)
        if not ok:
            if S and ev.n < opts.max_fun_evals:
                S.clear()
                Y.clear()
                continue
            status = "feval_budget" if ev.n >= opts.max_fun_evals else "line_search_failure"
            break
        it += 1
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
        f_old = f
        x, f, g = xn, fn, gn
        if callback is not None:
            callback(it, f, float(np.max(np.abs(projected_gradient(x, g, lo, hi)), initial=0.0)))
        if not approx and (f_old - f) <= opts.ftol * max(abs(f_old), abs(f), 1.0):
            status = "converged"
            break
    pg = float(np.max(np.abs(projected_gradient(x, g, lo, hi)), initial=0.0))
    return SolveResult(x, f, ev.n, it, status, pg)


def adam_minimize(fun, x0, lower=None, upper=None, opts=None, callback=None):
    """Projected Adam.

    Each step is projected onto the box.  With ``track_best`` the best
    evaluated iterate is returned, otherwise the last one.  A non-finite
    evaluation sends the iterate back to the last finite point and halves
    the step size until the next finite evaluation; after
    ``max_nonfinite`` consecutive failures the run stops.
    """
    opts = opts or AdamOptions()
    x = np.asarray(x0, dtype=float).ravel()
    lo, hi = _bounds(x, lower, upper)
    x = np.minimum(np.maximum(x, lo), hi)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_x, best_f = None, np.inf
    last_x, last_f, last_g = None, np.inf, None
    backoff = 1.0
    bad = 0
    n_evals = 0
    t = 0
    status = "converged"
    for it in range(opts.iters + 1):
        n_evals += 1
        try:
            f, g = fun(x)
            ok = np.isfinite(f) and np.all(np.isfinite(g))
        except FloatingPointError:
            ok = False
        if not ok:
            bad += 1
            if last_x is None or bad >= opts.max_nonfinite:
                status = "nonfinite"
                break
            backoff *= 0.5
            x, g = last_x, last_g
        else:
            bad = 0
            backoff = 1.0
            f = float(f)
            last_x, last_f, last_g = x, f, g
            if f < best_f:
                best_x, best_f = x, f
            if callback is not None:
                callback(it, f, float(np.max(np.abs(projected_gradient(x, g, lo, hi)),
                                             initial=0.0)))
        if it == opts.iters:
            break
        t += 1
        m = opts.beta1 * m + (1 - opts.beta1) * g
        v = opts.beta2 * v + (1 - opts.beta2) * g * g
        mhat = m / (1 - opts.beta1 ** t)
        vhat = v / (1 - opts.beta2 ** t)
        step = backoff * opts.learning_rate * mhat / (np.sqrt(vhat) + opts.eps)
        x = np.minimum(np.maximum(x - step, lo), hi)
    if last_x is None:
        raise FloatingPointError("objective never finite during Adam")
    if opts.track_best:
        xo, fo = best_x, best_f
    else:
        xo, fo = last_x, last_f
    _, g = fun(xo)
    n_evals += 1
    pg = float(np.max(np.abs(projected_gradient(xo, g, lo, hi)), initial=0.0))
    return SolveResult(xo.copy(), fo, n_evals, t, status, pg)
