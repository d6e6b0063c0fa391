# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation and backpropagation-through-time kernels.

Drop-in replacement for :mod:`sparsysid._pykernels`; see that module for the
calling convention.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, log1p, exp, fabs, isfinite
from libc.string cimport memset

cnp.import_array()


cdef inline double _sig(double z) noexcept nogil:
    return 0.5 * (1.0 + tanh(0.5 * z))


cdef inline double _act(double z, int code) noexcept nogil:
    if code == 0:
        return z
    if code == 1:
        return tanh(z)
    if code == 2:
        return z if z > 0.0 else 0.0
    return z * _sig(z)


cdef inline double _dact(double z, int code) noexcept nogil:
    cdef double t, s
    if code == 0:
        return 1.0
    if code == 1:
        t = tanh(z)
        return 1.0 - t * t
    if code == 2:
        return 1.0 if z > 0.0 else 0.0
    s = _sig(z)
    return s + z * s * (1.0 - s)


cdef inline double _softplus(double t) noexcept nogil:
    return (t if t > 0.0 else 0.0) + log1p(exp(-fabs(t)))


cdef inline double _sat(double p, double s, int mode, double gamma) noexcept nogil:
    if mode == 1:
        if p > s:
            return s
        if p < -s:
            return -s
        return p
    cdef double a = fabs(p), r
    if mode == 2:
        r = s + (_softplus(-gamma * (a + s)) - _softplus(-gamma * (a - s))) / gamma
        return r if p >= 0.0 else -r
    return p


cdef inline double _dsat(double p, double s, int mode, double gamma) noexcept nogil:
    if mode == 1:
        return 1.0 if (p >= -s and p <= s) else 0.0
    if mode == 2:
        return _sig(-gamma * (p - s)) - _sig(-gamma * (p + s))
    return 1.0


cdef void _mlp_fwd(const double* th, const long* sz, int nl, const double* inp,
                   double* z, double* hbuf, double* out, int act) noexcept nogil:
    """Forward pass; hidden pre-activations go to ``z`` (concatenated)."""
    cdef int l, i, j, n_in, n_out
    cdef const double* W
    cdef const double* b
    cdef const double* h = inp
    cdef double* zl = z
    cdef double* hl = hbuf
    cdef double acc
    cdef long pos = 0
    for l in range(nl):
        n_in = <int>sz[l]
        n_out = <int>sz[l + 1]
        W = th + pos
        b = th + pos + n_out * n_in
        pos += n_out * n_in + n_out
        if l < nl - 1:
            for i in range(n_out):
                acc = b[i]
                for j in range(n_in):
                    acc += W[i * n_in + j] * h[j]
                zl[i] = acc
                hl[i] = _act(acc, act)
            h = hl
            zl += n_out
            hl += n_out
        else:
            for i in range(n_out):
                acc = b[i]
                for j in range(n_in):
                    acc += W[i * n_in + j] * h[j]
                out[i] = acc


cdef void _mlp_bwd(const double* th, const long* sz, int nl, const double* inp,
                   const double* z, double* gout, double* d1, double* d2,
                   double* hbuf, double* gth, double* ginp, int act) noexcept nogil:
    """Backward pass; adds parameter gradients to ``gth``, writes ``ginp``."""
    cdef int l, i, j, n_in, n_out
    cdef long pos, zoff
    cdef const double* W
    cdef const double* hprev
    cdef double* delta = gout
    cdef double* nxt
    cdef double* gW
    cdef double* gb
    cdef double acc, dl
    # offsets of each layer's parameters and of each hidden layer's z
    cdef long poffs[64]
    cdef long zoffs[64]
    pos = 0
    zoff = 0
    for l in range(nl):
        poffs[l] = pos
        zoffs[l] = zoff
        pos += sz[l + 1] * sz[l] + sz[l + 1]
        if l < nl - 1:
            zoff += sz[l + 1]
    for l in range(nl - 1, -1, -1):
        n_in = <int>sz[l]
        n_out = <int>sz[l + 1]
        W = th + poffs[l]
        gW = gth + poffs[l]
        gb = gth + poffs[l] + n_out * n_in
        if l == 0:
            hprev = inp
        else:
            for j in range(n_in):
                hbuf[j] = _act(z[zoffs[l - 1] + j], act)
            hprev = hbuf
        for i in range(n_out):
            dl = delta[i]
            gb[i] += dl
            if dl != 0.0:
                for j in range(n_in):
                    gW[i * n_in + j] += dl * hprev[j]
        nxt = ginp if l == 0 else (d2 if delta == d1 else d1)
        for j in range(n_in):
            acc = 0.0
            for i in range(n_out):
                acc += W[i * n_in + j] * delta[i]
            if l > 0:
                acc *= _dact(z[zoffs[l - 1] + j], act)
            nxt[j] = acc
        delta = nxt


cdef int _forward(int N, int nx, int nu, int ny,
                  const double* x0, const double* A, const double* B,
                  const double* C, const double* D,
                  const double* thx, const long* szx, int nlx, int hx,
                  const double* thy, const long* szy, int nly, int hy,
                  const double* U, const double* Y,
                  const double* xsat, int sat_mode, double gamma, int act, int fy_u,
                  double* X, double* Yh, double* P, double* ZX, double* ZY,
                  double* xu, double* hbuf, double* outb, double* sse) noexcept nogil:
    cdef int k, i, j, nin_y
    cdef double acc, e
    cdef double* x
    cdef const double* u
    cdef double* zx_k
    cdef double* zy_k
    cdef double zdummy[1]
    nin_y = nx + (nu if fy_u else 0)
    for i in range(nx):
        X[i] = x0[i]
    sse[0] = 0.0
    for k in range(N):
        x = X + k * nx
        u = U + k * nu
        for i in range(nx):
            xu[i] = x[i]
        for j in range(nu):
            xu[nx + j] = u[j]
        if nly > 0:
            zy_k = ZY + k * hy if ZY != NULL else hbuf
            _mlp_fwd(thy, szy, nly, xu, zy_k, hbuf, outb, act)
        for i in range(ny):
            acc = 0.0
            for j in range(nx):
                acc += C[i * nx + j] * x[j]
            for j in range(nu):
                acc += D[i * nu + j] * u[j]
            if nly > 0:
                acc += outb[i]
            Yh[k * ny + i] = acc
            if not isfinite(acc):
                return k
            if Y != NULL:
                e = acc - Y[k * ny + i]
                sse[0] += e * e
        if k < N - 1:
            if nlx > 0:
                zx_k = ZX + k * hx if ZX != NULL else hbuf
                _mlp_fwd(thx, szx, nlx, xu, zx_k, hbuf, outb, act)
            for i in range(nx):
                acc = 0.0
                for j in range(nx):
                    acc += A[i * nx + j] * x[j]
                for j in range(nu):
                    acc += B[i * nu + j] * u[j]
                if nlx > 0:
                    acc += outb[i]
                if P != NULL:
                    P[k * nx + i] = acc
                acc = _sat(acc, xsat[i], sat_mode, gamma)
                X[(k + 1) * nx + i] = acc
                if not isfinite(acc):
                    return k + 1
    return -1


def _hidden(sizes):
    return int(sum(sizes[1:-1])) if len(sizes) > 1 else 0


def _prep(thx, szx, thy, szy):
    szx_a = np.ascontiguousarray(szx, dtype=np.int64) if len(szx) else np.zeros(1, np.int64)
    szy_a = np.ascontiguousarray(szy, dtype=np.int64) if len(szy) else np.zeros(1, np.int64)
    if max(len(szx), len(szy)) > 64:
        raise ValueError("at most 63 layers per network")
    thx_a = np.ascontiguousarray(thx, dtype=np.float64) if len(thx) else np.zeros(1)
    thy_a = np.ascontiguousarray(thy, dtype=np.float64) if len(thy) else np.zeros(1)
    return thx_a, szx_a, max(len(szx) - 1, 0), thy_a, szy_a, max(len(szy) - 1, 0)


def simulate(x0, A, B, C, D, thx, szx, thy, szy, U, xsat, int sat_mode, double gamma,
             int act, int fy_u):
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] Bv = np.ascontiguousarray(np.reshape(B, (A.shape[0], -1)), dtype=np.float64)
    cdef double[:, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef int nx = Av.shape[0]
    cdef int ny = Cv.shape[0]
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef int N = Uv.shape[0]
    cdef int nu = Uv.shape[1]
    cdef double[:, ::1] Dv = np.ascontiguousarray(np.reshape(D, (ny, nu)), dtype=np.float64)
    cdef double[::1] xs = np.ascontiguousarray(xsat, dtype=np.float64)
    thx_a, szx_a, nlx_, thy_a, szy_a, nly_ = _prep(thx, szx, thy, szy)
    cdef double[::1] thxv = thx_a
    cdef double[::1] thyv = thy_a
    cdef long[::1] szxv = szx_a
    cdef long[::1] szyv = szy_a
    cdef int nlx = nlx_, nly = nly_
    wmax = max([nx + nu, ny, nx] + list(szx) + list(szy))
    X_a = np.zeros((N, nx))
    Yh_a = np.zeros((N, ny))
    cdef double[:, ::1] X = X_a
    cdef double[:, ::1] Yh = Yh_a
    cdef double[::1] xu = np.zeros(nx + nu + 1)
    cdef double[::1] hbuf = np.zeros(sum(list(szx) + list(szy)) + wmax + 1)
    cdef double[::1] outb = np.zeros(wmax + 1)
    cdef double sse = 0.0
    cdef int bad
    if N == 0:
        return X_a, Yh_a, -1
    with nogil:
        bad = _forward(N, nx, nu, ny, &x0v[0], &Av[0, 0],
                       &Bv[0, 0] if nu > 0 else NULL, &Cv[0, 0],
                       &Dv[0, 0] if nu > 0 else NULL,
                       &thxv[0], &szxv[0], nlx, 0, &thyv[0], &szyv[0], nly, 0,
                       &Uv[0, 0] if nu > 0 else NULL, NULL, &xs[0], sat_mode, gamma,
                       act, fy_u, &X[0, 0], &Yh[0, 0], NULL, NULL, NULL,
                       &xu[0], &hbuf[0], &outb[0], &sse)
    return X_a, Yh_a, bad


def loss_grad(x0, A, B, C, D, thx, szx, thy, szy, U, Y, xsat, int sat_mode,
              double gamma, int act, int fy_u):
    cdef double[::1] x0v = np.ascontiguousarray(x0, dtype=np.float64)
    cdef double[:, ::1] Av = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef int nx = Av.shape[0]
    cdef int ny = Cv.shape[0]
    cdef double[:, ::1] Uv = np.ascontiguousarray(U, dtype=np.float64)
    cdef double[:, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef int N = Uv.shape[0]
    cdef int nu = Uv.shape[1]
    cdef double[:, ::1] Bv = np.ascontiguousarray(np.reshape(B, (nx, nu)), dtype=np.float64)
    cdef double[:, ::1] Dv = np.ascontiguousarray(np.reshape(D, (ny, nu)), dtype=np.float64)
    cdef double[::1] xs = np.ascontiguousarray(xsat, dtype=np.float64)
    thx_a, szx_a, nlx_, thy_a, szy_a, nly_ = _prep(thx, szx, thy, szy)
    cdef double[::1] thxv = thx_a
    cdef double[::1] thyv = thy_a
    cdef long[::1] szxv = szx_a
    cdef long[::1] szyv = szy_a
    cdef int nlx = nlx_, nly = nly_
    cdef int hx = _hidden(szx), hy = _hidden(szy)
    wmax = max([nx + nu, ny, nx] + list(szx) + list(szy))
    X_a = np.zeros((N, nx))
    Yh_a = np.zeros((N, ny))
    cdef double[:, ::1] X = X_a
    cdef double[:, ::1] Yh = Yh_a
    cdef double[:, ::1] P = np.zeros((max(N, 1), nx))
    cdef double[::1] ZX = np.zeros(max(N * hx, 1))
    cdef double[::1] ZY = np.zeros(max(N * hy, 1))
    cdef double[::1] xu = np.zeros(nx + nu + 1)
    cdef double[::1] hbuf = np.zeros(hx + hy + wmax + 1)
    cdef double[::1] outb = np.zeros(wmax + 1)
    cdef double[::1] d1 = np.zeros(wmax + 1)
    cdef double[::1] d2 = np.zeros(wmax + 1)
    cdef double[::1] gin = np.zeros(wmax + 1)
    cdef double[::1] ey = np.zeros(ny)
    cdef double[::1] dpre = np.zeros(nx)
    cdef double[::1] lam = np.zeros(nx)
    cdef double[::1] gx = np.zeros(nx)
    gA_a = np.zeros((nx, nx))
    gB_a = np.zeros((nx, nu))
    gC_a = np.zeros((ny, nx))
    gD_a = np.zeros((ny, nu))
    gthx_a = np.zeros(thx_a.shape[0])
    gthy_a = np.zeros(thy_a.shape[0])
    cdef double[:, ::1] gA = gA_a
    cdef double[:, ::1] gB = gB_a if nu > 0 else np.zeros((1, 1))
    cdef double[:, ::1] gC = gC_a
    cdef double[:, ::1] gD = gD_a if nu > 0 else np.zeros((1, 1))
    cdef double[::1] gthx = gthx_a
    cdef double[::1] gthy = gthy_a
    cdef double sse = 0.0
    cdef int bad = -1
    cdef int k, i, j, nin_y
    cdef double* x
    cdef double* u
    cdef double dummy[1]
    nin_y = nx + (nu if fy_u else 0)
    if N > 0:
        with nogil:
            bad = _forward(N, nx, nu, ny, &x0v[0], &Av[0, 0],
                           &Bv[0, 0] if nu > 0 else NULL, &Cv[0, 0],
                           &Dv[0, 0] if nu > 0 else NULL,
                           &thxv[0], &szxv[0], nlx, hx, &thyv[0], &szyv[0], nly, hy,
                           &Uv[0, 0] if nu > 0 else NULL, &Yv[0, 0], &xs[0], sat_mode,
                           gamma, act, fy_u, &X[0, 0], &Yh[0, 0], &P[0, 0],
                           &ZX[0], &ZY[0], &xu[0], &hbuf[0], &outb[0], &sse)
            if bad < 0:
                for k in range(N - 1, -1, -1):
                    x = &X[k, 0]
                    u = &Uv[k, 0] if nu > 0 else &dummy[0]
                    for i in range(nx):
                        xu[i] = x[i]
                        gx[i] = 0.0
                    for j in range(nu):
                        xu[nx + j] = u[j]
                    if k < N - 1:
                        for i in range(nx):
                            dpre[i] = lam[i] * _dsat(P[k, i], xs[i], sat_mode, gamma)
                        for i in range(nx):
                            if dpre[i] != 0.0:
                                for j in range(nx):
                                    gA[i, j] += dpre[i] * x[j]
                                    gx[j] += Av[i, j] * dpre[i]
                                for j in range(nu):
                                    gB[i, j] += dpre[i] * u[j]
                        if nlx > 0:
                            for i in range(nx):
                                d1[i] = dpre[i]
                            _mlp_bwd(&thxv[0], &szxv[0], nlx, &xu[0], &ZX[k * hx],
                                     &d1[0], &d1[0], &d2[0], &hbuf[0], &gthx[0],
                                     &gin[0], act)
                            for i in range(nx):
                                gx[i] += gin[i]
                    for i in range(ny):
                        ey[i] = 2.0 * (Yh[k, i] - Yv[k, i])
                        for j in range(nx):
                            gC[i, j] += ey[i] * x[j]
                            gx[j] += Cv[i, j] * ey[i]
                        for j in range(nu):
                            gD[i, j] += ey[i] * u[j]
                    if nly > 0:
                        for i in range(ny):
                            d1[i] = ey[i]
                        _mlp_bwd(&thyv[0], &szyv[0], nly, &xu[0], &ZY[k * hy],
                                 &d1[0], &d1[0], &d2[0], &hbuf[0], &gthy[0],
                                 &gin[0], act)
                        for i in range(nx):
                            gx[i] += gin[i]
                    for i in range(nx):
                        lam[i] = gx[i]
    gx0 = np.asarray(lam).copy() if bad < 0 else np.zeros(nx)
    return (sse, bad, gx0, gA_a, gB_a, gC_a, gD_a,
            gthx_a[:len(thx)], gthy_a[:len(thy)])
