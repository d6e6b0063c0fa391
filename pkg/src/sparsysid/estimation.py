"""Initial-state reconstruction and state estimation.

* :func:`ekf_rts_reconstruct` runs several epochs of an extended Kalman
  filter followed by a Rauch-Tung-Striebel smoother; each epoch restarts from
  the smoothed initial state and covariance of the previous one.
* :func:`refine_x0` polishes an initial state by minimizing the simulation
  error over ``x0`` alone.
* :func:`ekf_output_disturbance_predict` scores p-step-ahead predictions of
  an EKF whose model is augmented with a constant output disturbance.

Linear systems are solved through Cholesky factorizations; a matrix that is
not positive definite raises :class:`EstimationError` with the step index,
never silently regularized.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import (SaturationConfig, output_jacobian, state_jacobian, step_batch)
from .objectives import r2_score
from .optim import LbfgsbOptions, lbfgsb_minimize


class EstimationError(ArithmeticError):
    """A covariance that should be positive definite is not."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} at step {step}")
        self.step = step


@dataclass(frozen=True)
class EkfConfig:
    """Settings of the EKF/RTS reconstruction.

    ``Q``, ``R`` and ``P0`` may be scalars (times identity) or matrices.
    ``P0=None`` means ``I / (rho_x N)``, or ``1e3 I`` when ``rho_x`` is zero.
    """

    n_epochs: int = 1
    Q: object = 1e-8
    R: object = 1.0
    P0: object = None
    rho_x: float = 0.0
    x0_init: object = None

    def __post_init__(self):
        if int(self.n_epochs) < 1:
            raise ValueError("n_epochs must be >= 1")
        if not self.rho_x >= 0:
            raise ValueError("rho_x must be >= 0")

    def to_dict(self):
        def enc(v):
            return None if v is None else np.asarray(v, dtype=float).tolist()
        return {"n_epochs": int(self.n_epochs), "Q": enc(self.Q), "R": enc(self.R),
                "P0": enc(self.P0), "rho_x": self.rho_x, "x0_init": enc(self.x0_init)}


@dataclass
class SmootherState:
    """Quantities stored by one forward/backward pass."""

    x_filt: np.ndarray
    x_pred: np.ndarray
    P_filt: np.ndarray
    P_pred: np.ndarray
    A: np.ndarray
    innovations: np.ndarray
    x_smooth: np.ndarray = None
    P_smooth: np.ndarray = None
    G: np.ndarray = None
    history: list = field(default_factory=list)


def _spd_matrix(v, n, name):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        a = a * np.eye(n)
    if a.shape != (n, n):
        raise ValueError(f"{name} must be a scalar or a {n}x{n} matrix")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return a


def _sym(P):
    return 0.5 * (P + P.T)


def _chol_solve(S, B, what, k):
    """Solve ``S X = B`` for symmetric positive definite ``S``."""
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise EstimationError(f"{what} is not positive definite", k) from None
    return np.linalg.solve(L.T, np.linalg.solve(L, B))


def _experiment(data, experiment=0):
    if isinstance(data, tuple):
        U, Y = data
    else:
        U, Y = data.experiments[experiment]
    U = np.asarray(U, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    return U, Y


def default_P0(rho_x, N, n_x):
    """``I / (rho_x N)``, the covariance equivalent to ``rho_x/2 ||x0||^2``;
    ``1e3 I`` when ``rho_x`` is zero."""
    if rho_x > 0:
        return np.eye(n_x) / (rho_x * N)
    return 1e3 * np.eye(n_x)


def ekf_forward(f_jac, g_jac, U, Y, x0, P0, Q, R, store=True):
    """Forward EKF pass.

    Parameters
    ----------
    f_jac, g_jac : callable
        ``(x, u) -> (value, Jacobian wrt x)`` of the state update and output.
    U, Y : numpy.ndarray
    x0, P0 : initial predicted mean and covariance.
    Q, R : process and measurement covariances.

    Returns
    -------
    SmootherState
    """
    N = U.shape[0]
    n = x0.size
    ny = Y.shape[1]
    xf = np.empty((N, n))
    xp = np.empty((N + 1, n))
    Pf = np.empty((N, n, n)) if store else None
    Pp = np.empty((N + 1, n, n)) if store else None
    Aks = np.empty((N, n, n)) if store else None
    inn = np.empty((N, ny))
    x = np.array(x0, dtype=float)
    P = _sym(np.array(P0, dtype=float))
    xp[0] = x
    if store:
        Pp[0] = P
    for k in range(N):
        yk, Ck = g_jac(x, U[k])
        Z = P @ Ck.T
        S = _sym(R + Ck @ Z)
        M = _chol_solve(S, Z.T, "innovation covariance", k).T
        e = Y[k] - yk
        x = x + M @ e
        P = _sym(P - M @ Z.T)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(P))):
            raise EstimationError("non-finite filter state", k)
        xf[k] = x
        inn[k] = e
        if store:
            Pf[k] = P
        x, Ak = f_jac(x, U[k])
        P = _sym(Ak @ P @ Ak.T + Q)
        xp[k + 1] = x
        if store:
            Pp[k + 1] = P
            Aks[k] = Ak
    return SmootherState(xf, xp, Pf, Pp, Aks, inn)


def rts_backward(st):
    """Backward smoothing pass over a stored forward pass (in place)."""
    N, n = st.x_filt.shape
    xs = np.empty((N + 1, n))
    Ps = np.empty((N + 1, n, n))
    G = np.empty((N, n, n))
    xs[N] = st.x_pred[N]
    Ps[N] = st.P_pred[N]
    for k in range(N - 1, -1, -1):
        # G_k = P_{k|k} A_k' P_{k+1|k}^{-1}
        Gk = _chol_solve(st.P_pred[k + 1], st.A[k] @ st.P_filt[k],
                         "predicted covariance", k + 1).T
        xs[k] = st.x_filt[k] + Gk @ (xs[k + 1] - st.x_pred[k + 1])
        Ps[k] = _sym(st.P_filt[k] + Gk @ (Ps[k + 1] - st.P_pred[k + 1]) @ Gk.T)
        G[k] = Gk
    st.x_smooth, st.P_smooth, st.G = xs, Ps, G
    return st


def _model_fns(params, spec, sat):
    sat = sat or SaturationConfig()

    def f_jac(x, u):
        return state_jacobian(params, spec, x, u, sat)

    def g_jac(x, u):
        return output_jacobian(params, spec, x, u)
    return f_jac, g_jac


def ekf_rts_reconstruct(params, spec, data, cfg=None, sat=None, experiment=0,
                        full_output=False):
    """Estimate the initial state of an experiment by EKF + RTS smoothing.

    Parameters
    ----------
    params : ModelParams
    spec : ModelSpec
    data : Dataset or (U, Y)
    cfg : EkfConfig, optional
    sat : SaturationConfig, optional
    experiment : int
        Experiment of ``data`` to use.
    full_output : bool
        Also return the last :class:`SmootherState`, whose ``history`` lists
        the initial-state estimate after every epoch.

    Returns
    -------
    x0 : numpy.ndarray
    state : SmootherState, only if ``full_output``
    """
    cfg = cfg or EkfConfig()
    U, Y = _experiment(data, experiment)
    N, n = U.shape[0], spec.n_x
    if N < 1:
        raise ValueError("need at least one sample")
    Q = _spd_matrix(cfg.Q, n, "Q")
    R = _spd_matrix(cfg.R, spec.n_y, "R")
    P0 = _spd_matrix(default_P0(cfg.rho_x, N, n) if cfg.P0 is None else cfg.P0, n, "P0")
    x0 = np.zeros(n) if cfg.x0_init is None else np.asarray(cfg.x0_init, dtype=float).copy()
    f_jac, g_jac = _model_fns(params, spec, sat)
    history = []
    st = None
    for _ in range(int(cfg.n_epochs)):
        st = rts_backward(ekf_forward(f_jac, g_jac, U, Y, x0, P0, Q, R))
        x0, P0 = st.x_smooth[0].copy(), st.P_smooth[0].copy()
        history.append(x0.copy())
    st.history = history
    return (x0, st) if full_output else x0


def refine_x0(params, spec, data, x0_init, rho_x=0.0, sat=None, experiment=0, opts=None):
    """Minimize ``rho_x/2 ||x0||^2 + mean squared simulation error`` over ``x0``.

    All model parameters stay fixed.  Uses the bound-constrained solver with
    infinite bounds.

    Returns
    -------
    x0 : numpy.ndarray
    result : SolveResult
    """
    sat = sat or SaturationConfig()
    U, Y = _experiment(data, experiment)
    N = U.shape[0]
    U = np.ascontiguousarray(U)
    Y = np.ascontiguousarray(Y)

    def fun(x0):
        sse, bad, g = kernels.loss_grad(params, spec, x0, U, Y, sat)
        if bad >= 0:
            raise FloatingPointError(f"non-finite simulation at step {bad}")
        return sse / N + 0.5 * rho_x * float(x0 @ x0), g["x0"] / N + rho_x * x0

    opts = opts or LbfgsbOptions(max_fun_evals=1000, grad_tol=1e-12, ftol=1e-15)
    res = lbfgsb_minimize(fun, np.asarray(x0_init, dtype=float), opts=opts)
    return res.x_opt, res


@dataclass(frozen=True)
class PredictionReport:
    """Scores of p-step-ahead predictions.

    ``r2[p - 1]`` holds per-output R^2 for horizon ``p`` and ``r2_avg[p - 1]``
    their mean; ``q_filt`` is the filtered output disturbance (zeros when
    the model is not augmented).
    """

    horizons: np.ndarray
    r2: np.ndarray
    r2_avg: np.ndarray
    q_filt: np.ndarray

    def rows(self):
        return [(int(p), float(a)) for p, a in zip(self.horizons, self.r2_avg)]


def ekf_output_disturbance_predict(params, spec, data, horizon, cfg=None, sat=None,
                                   augment=True, q_cov=1e-3, q_P0=1.0, experiment=0):
    """Score ``y_{k+p|k}`` for ``p = 1..horizon`` with an EKF.

    With ``augment`` the state is extended by ``q`` in R^{n_y} with
    ``q_{k+1} = q_k`` plus white noise of covariance ``q_cov I`` and
    output ``g(x, u) + q``.  Predictions propagate ``x_{k|k}`` through the
    model for ``p`` steps with the known inputs and ``q`` frozen.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    cfg = cfg or EkfConfig()
    sat = sat or SaturationConfig()
    U, Y = _experiment(data, experiment)
    N, n, ny = U.shape[0], spec.n_x, spec.n_y
    if N <= horizon:
        raise ValueError(f"need more than {horizon} samples")
    Q = _spd_matrix(cfg.Q, n, "Q")
    R = _spd_matrix(cfg.R, ny, "R")
    P0 = _spd_matrix(default_P0(cfg.rho_x, N, n) if cfg.P0 is None else cfg.P0, n, "P0")
    x0 = np.zeros(n) if cfg.x0_init is None else np.asarray(cfg.x0_init, dtype=float)
    f_jac, g_jac = _model_fns(params, spec, sat)
    if augment:
        na = n + ny

        def fa(xa, u):
            xn, J = f_jac(xa[:n], u)
            Ja = np.eye(na)
            Ja[:n, :n] = J
            return np.concatenate([xn, xa[n:]]), Ja

        def ga(xa, u):
            y, J = g_jac(xa[:n], u)
            return y + xa[n:], np.hstack([J, np.eye(ny)])

        Qa = np.zeros((na, na))
        Qa[:n, :n] = Q
        Qa[n:, n:] = _spd_matrix(q_cov, ny, "q_cov")
        Pa = np.zeros((na, na))
        Pa[:n, :n] = P0
        Pa[n:, n:] = _spd_matrix(q_P0, ny, "q_P0")
        st = ekf_forward(fa, ga, U, Y, np.concatenate([x0, np.zeros(ny)]), Pa, Qa, R,
                         store=False)
        Xk, Qk = st.x_filt[:, :n], st.x_filt[:, n:]
    else:
        st = ekf_forward(f_jac, g_jac, U, Y, x0, P0, Q, R, store=False)
        Xk, Qk = st.x_filt, np.zeros((N, ny))
    r2 = np.empty((horizon, ny))
    X = Xk.copy()
    for p in range(1, horizon + 1):
        # X[k] holds x_{k+p-1|k}; advance with u_{k+p-1}
        m = N - p + 1
        X, _ = step_batch(params, spec, X[:m], U[p - 1:p - 1 + m], sat)
        m = N - p
        _, Yp = step_batch(params, spec, X[:m], U[p:p + m], sat)
        r2[p - 1] = np.atleast_1d(r2_score(Y[p:], Yp + Qk[:m]))
    return PredictionReport(np.arange(1, horizon + 1), r2, r2.mean(axis=1), Qk)
