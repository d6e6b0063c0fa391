"""Pure-NumPy simulation and backpropagation-through-time kernels.

Same calling convention as the compiled ``_ckernels`` module.  Networks are
passed as a flat parameter vector (``W1, b1, W2, b2, ...``, weights
row-major) together with the layer sizes ``[n_in, h1, ..., n_out]``.

Activation codes: 0 identity, 1 tanh, 2 relu, 3 swish.
Saturation codes: 0 none, 1 hard, 2 soft.
"""
import numpy as np


def _act(z, code):
    if code == 0:
        return z
    if code == 1:
        return np.tanh(z)
    if code == 2:
        return np.maximum(z, 0.0)
    return z * _sig(z)


def _dact(z, code):
    if code == 0:
        return np.ones_like(z)
    if code == 1:
        t = np.tanh(z)
        return 1.0 - t * t
    if code == 2:
        return (z > 0).astype(float)
    s = _sig(z)
    return s + z * s * (1.0 - s)


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softplus(t):
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _sat(p, xsat, mode, gamma):
    if mode == 1:
        return np.minimum(np.maximum(p, -xsat), xsat)
    if mode == 2:
        a = np.abs(p)
        return np.sign(p) * (xsat + (_softplus(-gamma * (a + xsat)) - _softplus(-gamma * (a - xsat))) / gamma)
    return p


def _dsat(p, xsat, mode, gamma):
    if mode == 1:
        return ((p >= -xsat) & (p <= xsat)).astype(float)
    if mode == 2:
        return _sig(-gamma * (p - xsat)) - _sig(-gamma * (p + xsat))
    return np.ones_like(p)


def _layers(theta, sizes):
    out = []
    pos = 0
    for i in range(len(sizes) - 1):
        n_out, n_in = sizes[i + 1], sizes[i]
        W = theta[pos:pos + n_out * n_in].reshape(n_out, n_in)
        pos += n_out * n_in
        out.append((W, theta[pos:pos + n_out], pos - n_out * n_in))
        pos += n_out
    return out


def _fwd(layers, inp, act):
    zs = []
    h = inp
    last = len(layers) - 1
    for i, (W, b, _) in enumerate(layers):
        z = W @ h + b
        if i < last:
            zs.append(z)
            h = _act(z, act)
        else:
            h = z
    return h, zs


def _bwd(layers, inp, zs, gout, act, gtheta):
    """Accumulate parameter gradients into ``gtheta``; return input gradient."""
    delta = gout
    for i in range(len(layers) - 1, -1, -1):
        W, b, off = layers[i]
        h_prev = inp if i == 0 else _act(zs[i - 1], act)
        n_out, n_in = W.shape
        gtheta[off:off + n_out * n_in] += np.outer(delta, h_prev).ravel()
        gtheta[off + n_out * n_in:off + n_out * n_in + n_out] += delta
        g = W.T @ delta
        if i > 0:
            delta = g * _dact(zs[i - 1], act)
        else:
            return g
    return None


@np.errstate(over="ignore", invalid="ignore")
def _forward(x0, A, B, C, D, thx, szx, thy, szy, U, Y, xsat, sat_mode, gamma,
             act, fy_u, store):
    N = U.shape[0]
    nx = A.shape[0]
    ny = C.shape[0]
    Lx = _layers(thx, szx) if len(szx) else []
    Ly = _layers(thy, szy) if len(szy) else []
    X = np.empty((N, nx))
    Yh = np.empty((N, ny))
    P = np.empty((max(N - 1, 0), nx)) if store else None
    ZX = [None] * N if store else None
    ZY = [None] * N if store else None
    sse = 0.0
    x = np.array(x0, dtype=float)
    for k in range(N):
        u = U[k]
        X[k] = x
        xu = np.concatenate([x, u])
        yh = C @ x + D @ u
        if Ly:
            out, zs = _fwd(Ly, xu if fy_u else x, act)
            yh = yh + out
            if store:
                ZY[k] = zs
        Yh[k] = yh
        if not np.all(np.isfinite(yh)):
            return X, Yh, k, sse, P, ZX, ZY
        if Y is not None:
            e = yh - Y[k]
            sse += float(e @ e)
        if k < N - 1:
            pre = A @ x + B @ u
            if Lx:
                out, zs = _fwd(Lx, xu, act)
                pre = pre + out
                if store:
                    ZX[k] = zs
            if store:
                P[k] = pre
            x = _sat(pre, xsat, sat_mode, gamma)
            if not np.all(np.isfinite(x)):
                return X, Yh, k + 1, sse, P, ZX, ZY
    return X, Yh, -1, sse, P, ZX, ZY


def simulate(x0, A, B, C, D, thx, szx, thy, szy, U, xsat, sat_mode, gamma, act, fy_u):
    """Return ``(X, Yhat, bad)``; ``bad`` is the first non-finite step or -1."""
    X, Yh, bad, _, _, _, _ = _forward(x0, A, B, C, D, thx, szx, thy, szy, U, None,
                                      xsat, sat_mode, gamma, act, fy_u, False)
    return X, Yh, bad


def loss_grad(x0, A, B, C, D, thx, szx, thy, szy, U, Y, xsat, sat_mode, gamma, act, fy_u):
    """Sum of squared output errors and its gradient.

    Returns
    -------
    sse, bad, gx0, gA, gB, gC, gD, gthx, gthy
    """
    N = U.shape[0]
    nx = A.shape[0]
    X, Yh, bad, sse, P, ZX, ZY = _forward(x0, A, B, C, D, thx, szx, thy, szy, U, Y,
                                          xsat, sat_mode, gamma, act, fy_u, True)
    gA = np.zeros_like(A)
    gB = np.zeros_like(B)
    gC = np.zeros_like(C)
    gD = np.zeros_like(D)
    gthx = np.zeros_like(thx)
    gthy = np.zeros_like(thy)
    if bad >= 0:
        return sse, bad, np.zeros(nx), gA, gB, gC, gD, gthx, gthy
    Lx = _layers(thx, szx) if len(szx) else []
    Ly = _layers(thy, szy) if len(szy) else []
    lam = np.zeros(nx)
    for k in range(N - 1, -1, -1):
        x = X[k]
        u = U[k]
        xu = np.concatenate([x, u])
        gx = np.zeros(nx)
        if k < N - 1:
            dpre = lam * _dsat(P[k], xsat, sat_mode, gamma)
            gA += np.outer(dpre, x)
            gB += np.outer(dpre, u)
            gx += A.T @ dpre
            if Lx:
                gx += _bwd(Lx, xu, ZX[k], dpre, act, gthx)[:nx]
        ey = 2.0 * (Yh[k] - Y[k])
        gC += np.outer(ey, x)
        gD += np.outer(ey, u)
        gx += C.T @ ey
        if Ly:
            gx += _bwd(Ly, xu if fy_u else x, ZY[k], ey, act, gthy)[:nx]
        lam = gx
    return sse, -1, lam, gA, gB, gC, gD, gthx, gthy
