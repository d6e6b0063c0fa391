"""Independent reference computations for values frozen into the tests.

Run ``python tools/oracles.py`` to print them.  Nothing here imports the
package; each value is obtained by a different route (high-precision
arithmetic, symbolic differentiation, exhaustive enumeration or a dense
Gaussian smoother).
"""
import itertools

import mpmath as mp
import numpy as np
import sympy as sp


def soft_sat_mp(x, s, g):
    mp.mp.dps = 60
    x, s, g = mp.mpf(x), mp.mpf(s), mp.mpf(g)
    return s + mp.log((1 + mp.e ** (-g * (x + s))) / (1 + mp.e ** (-g * (x - s)))) / g


def soft_sat_values():
    print("soft_sat(10, 1, 100) =", mp.nstr(soft_sat_mp(10, 1, 100), 30))
    for g in (5, 20, 50):
        grid = np.linspace(-3, 3, 601)
        dev = max(abs(float(soft_sat_mp(x, 1, g)) - min(max(x, -1.0), 1.0)) for x in grid)
        print(f"max |soft - hard| on [-3, 3], gamma={g}: {dev!r}")


def scalar_linear_gradient():
    """Two-step scalar model, loss (1/2) sum_k (C x_k - y_k)^2."""
    A, B, C, x0 = sp.symbols("A B C x0")
    u = (1, 1)
    y = (0, 1)
    x = [x0]
    x.append(A * x[0] + B * u[0])
    f = sp.Rational(1, 2) * sum((C * x[k] - y[k]) ** 2 for k in range(2))
    for point in ({A: sp.Rational(1, 2), B: 1, C: 1, x0: 0},
                  {A: sp.Rational(3, 10), B: sp.Rational(7, 10), C: sp.Rational(6, 5),
                   x0: sp.Rational(2, 5)}):
        vals = [f.subs(point)] + [sp.diff(f, s).subs(point) for s in (x0, A, B, C)]
        print("point", {str(k): str(v) for k, v in point.items()},
              "f, df/dx0, df/dA, df/dB, df/dC =", [str(v) for v in vals],
              [float(v) for v in vals])


def active_set_qp():
    """min 1/2 x'Hx + q'x, x >= 0, exhaustively over active sets."""
    rng = np.random.default_rng(7)
    n = 10
    M = rng.standard_normal((n, n))
    H = M @ M.T + n * np.eye(n)
    # structured so that about half the coordinates end up at the bound
    q = np.where(np.arange(n) % 2 == 0, 5.0, -5.0) + 0.5 * rng.standard_normal(n)
    best = None
    for pattern in itertools.product((False, True), repeat=n):
        act = np.array(pattern)
        free = ~act
        x = np.zeros(n)
        if free.any():
            x[free] = np.linalg.solve(H[np.ix_(free, free)], -q[free])
        if np.any(x < -1e-12):
            continue
        lam = H @ x + q
        if np.any(lam[act] < -1e-12):
            continue
        best = x
        break
    print("QP H seed 7; x* =", repr(best.tolist()))
    print("active count", int(np.sum(best == 0)))
    return H, q, best


def adam_scalar():
    x, m, v = 1.0, 0.0, 0.0
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    best = (x * x, x)
    for t in range(1, 501):
        g = 2 * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        best = min(best, (x * x, x))
    print("adam x^2: final x =", repr(x), "best x =", repr(best[1]))


def static_smoother():
    """Gaussian smoother for x_{k+1} = x_k + w, y_k = x_k + v, as one linear
    solve in information form.  The tridiagonal system is badly conditioned
    (about 4 N / q), so it is solved at 50 digits with the Thomas algorithm."""
    mp.mp.dps = 50
    N = 100
    q, r, p0, ybar = mp.mpf("1e-8"), mp.mpf(1), mp.mpf(1000), mp.mpf(5)
    diag = [1 / r for _ in range(N)]
    off = [-1 / q for _ in range(N - 1)]
    diag[0] += 1 / p0
    for k in range(N - 1):
        diag[k] += 1 / q
        diag[k + 1] += 1 / q
    rhs = [ybar / r for _ in range(N)]
    # forward elimination, back substitution
    c, d = [mp.mpf(0)] * N, [mp.mpf(0)] * N
    c[0], d[0] = off[0] / diag[0], rhs[0] / diag[0]
    for k in range(1, N):
        den = diag[k] - off[k - 1] * c[k - 1]
        c[k] = off[k] / den if k < N - 1 else mp.mpf(0)
        d[k] = (rhs[k] - off[k - 1] * d[k - 1]) / den
    x = d[N - 1]
    for k in range(N - 2, -1, -1):
        x = d[k] - c[k] * x
    print("static smoother x0 =", mp.nstr(x, 20))


if __name__ == "__main__":
    soft_sat_values()
    scalar_linear_gradient()
    active_set_qp()
    adam_scalar()
    static_smoother()
    print("state group size (n_x=12, widths 36/24):", 1 + 23 + 6 + 6 + 36 + 24 + 36 + 1)
