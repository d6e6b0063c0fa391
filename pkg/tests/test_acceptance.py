"""End-to-end acceptance criteria, one test per criterion.

Run ``pytest tests/test_acceptance.py -v``; a summary with one PASS/FAIL line
per criterion is printed at the end of the session.
"""
import json
import time

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sparsysid.cli import main
from sparsysid.datasets import (Dataset, gen_input_selection, gen_order_reduction,
                                order_reduction_system, random_stable_system)
from sparsysid.estimation import (EkfConfig, ekf_output_disturbance_predict,
                                  ekf_rts_reconstruct)
from sparsysid.gradient import SimulationLoss
from sparsysid.model import ModelParams, ModelSpec, SaturationConfig, simulate
from sparsysid.objectives import RegularizationConfig, Scaler
from sparsysid.optim import LbfgsbOptions, lbfgsb_minimize
from sparsysid.split import build_elastic_net_split, build_group_lasso_split
from sparsysid.trainer import TrainConfig, fit, sweep

from test_estimation import kalman_rts_textbook, noiseless_rnn_data
from test_split import prox_grad

pytestmark = pytest.mark.slow


def criterion(n, title):
    return pytest.mark.criterion(n, title)


def _fd(fun, v, h=1e-6):
    out = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        out[i] = (fun(v + e) - fun(v - e)) / (2 * h)
    return out


@criterion(1, "gradient vs central differences, 20 random models")
def test_gradient_correctness(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(20):
        n_x = int(rng.integers(1, 5))
        n_u = int(rng.integers(1, 3))
        n_y = int(rng.integers(1, 3))
        N = int(rng.integers(10, 51))
        if i % 2:
            spec = ModelSpec(n_x, n_u, n_y, (int(rng.integers(2, 7)),), (int(rng.integers(2, 7)),),
                             ("tanh", "swish")[i % 4 // 2], feedthrough=bool(i % 3))
        else:
            spec = ModelSpec(n_x, n_u, n_y, feedthrough=bool(i % 3))
        data = Dataset([(rng.standard_normal((N, n_u)), rng.standard_normal((N, n_y)))])
        loss = SimulationLoss(spec, data, SaturationConfig())
        v = 0.3 * rng.standard_normal(loss.layout.size)
        X, _ = simulate(loss.params(v), spec, data.experiments[0][0])
        assert np.all(np.abs(np.abs(X) - 1e4) > 1e-3)
        _, g = loss(v)
        fd = _fd(loss.value, v)
        # the 1e-3 floor sits above the central-difference roundoff (eps |f| / h)
        worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3))))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max rel err {worst:.1e}")
    assert worst < 1e-5
    assert elapsed < 10


def _quad_problem(rng):
    n = int(rng.integers(2, 9))
    M = rng.standard_normal((n, n))
    H = M @ M.T / n + 0.1 * np.eye(n)
    q = 2 * rng.standard_normal(n)
    return n, H, q


@criterion(2, "l1 splitting vs proximal-gradient oracle, 50 quadratics")
def test_splitting_equivalence(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    gap = comp = 0.0
    opts = LbfgsbOptions(max_fun_evals=5000, grad_tol=1e-12, ftol=1e-300)
    for i in range(50):
        tau = (0.1, 1.0)[i % 2]
        n, H, q = _quad_problem(rng)

        def f(x, H=H, q=q):
            return 0.5 * x @ H @ x + q @ x, H @ x + q
        prob = build_elastic_net_split(f, RegularizationConfig(tau=tau), range(n))
        res = lbfgsb_minimize(prob, np.full(prob.dim, 0.5), prob.lower, prob.upper, opts)
        x = prob.recover(res.x_opt)
        ref = prox_grad(H, q, tau, [], 0.0)
        obj = lambda z: f(z)[0] + tau * np.abs(z).sum()
        gap = max(gap, abs(obj(x) - obj(ref)))
        comp = max(comp, prob.complementarity(res.x_opt))
    elapsed = time.perf_counter() - t0
    record_property("detail", f"max objective gap {gap:.1e}, complementarity {comp:.1e}")
    assert gap <= 1e-6
    assert comp <= 1e-8
    assert elapsed < 30


@criterion(3, "group soft-threshold instances")
def test_group_annihilation(record_property):
    cfg = RegularizationConfig(tau_g=1.0, epsilon=1e-16, group_kind="state_groups")
    opts = LbfgsbOptions(grad_tol=1e-12, ftol=1e-300)
    out = []
    for c in ([3.0, 4.0], [0.3, 0.4]):
        c = np.array(c)
        prob = build_group_lasso_split(lambda x, c=c: (0.5 * (x - c) @ (x - c), x - c), cfg,
                                       [[0, 1]], [0, 1])
        res = lbfgsb_minimize(prob, np.full(4, 0.5), prob.lower, prob.upper, opts)
        out.append(prob.recover(res.x_opt))
    record_property("detail", f"{np.round(out[0], 8).tolist()} and {np.round(out[1], 8).tolist()}")
    assert_allclose(out[0], [2.4, 3.2], atol=1e-6)
    assert_allclose(out[1], [0.0, 0.0], atol=1e-6)


def _rosen(x):
    a, b = x
    return ((1 - a) ** 2 + 100 * (b - a * a) ** 2,
            np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)]))


@criterion(4, "solver sanity and determinism")
def test_solver_sanity():
    runs = []
    for _ in range(2):
        r1 = lbfgsb_minimize(lambda x: ((x[0] - 2) ** 2, 2 * (x - 2)), [0.0], upper=[1.0])
        r2 = lbfgsb_minimize(_rosen, [-1.2, 1.0], [-10, -10], [10, 10],
                             LbfgsbOptions(max_fun_evals=2000, grad_tol=1e-10, ftol=1e-300))
        rng = np.random.default_rng(7)
        M = rng.standard_normal((10, 10))
        H = M @ M.T + 10 * np.eye(10)
        q = np.where(np.arange(10) % 2 == 0, 5.0, -5.0) + 0.5 * rng.standard_normal(10)
        r3 = lbfgsb_minimize(lambda x: (0.5 * x @ H @ x + q @ x, H @ x + q), np.ones(10),
                             np.zeros(10), None, LbfgsbOptions(grad_tol=1e-12, ftol=1e-300))
        runs.append((r1, r2, r3))
    r1, r2, r3 = runs[0]
    assert r1.x_opt[0] == 1.0 and r1.f_opt == 1.0 and r1.projected_grad_norm == 0.0
    assert_allclose(r2.x_opt, [1, 1], atol=1e-6)
    assert r2.f_opt < 1e-12
    assert_allclose(r3.x_opt, [0.0, 0.26661593239275144, 0.0, 0.2563221148697065, 0.0,
                               0.3904811284350306, 0.0, 0.25072266283181194, 0.0,
                               0.20219734903611222], atol=1e-6)
    for a, b in zip(*runs):
        assert np.array_equal(a.x_opt, b.x_opt) and a.f_opt == b.f_opt
        assert (a.n_fun_evals, a.n_iters, a.status) == (b.n_fun_evals, b.n_iters, b.status)


# training protocol: 1000 Adam iterations, then at most 1000 L-BFGS-B evaluations,
# 10 starts, best training R^2
PROTOCOL = dict(n_starts=10, seed=1)


@criterion(5, "order reduction: fit and state-group sweep")
def test_order_reduction(record_property):
    t0 = time.perf_counter()
    ds, _ = gen_order_reduction(seed=1)
    data = Scaler.fit(ds).apply(ds)
    spec = ModelSpec(6, 2, 2, feedthrough=False)
    reg = RegularizationConfig(rho_theta=1e-3, rho_x=1e-3, group_kind="state_groups")
    free = fit(spec, data, TrainConfig(reg=reg, **PROTOCOL))
    rows = sweep(spec, data, TrainConfig(reg=reg, **PROTOCOL), "tau_g",
                 [1e-4, 1e-3, 1e-2, 1e-1, 1.0])
    elapsed = time.perf_counter() - t0
    orders = [r["effective_order"] for r in rows]
    record_property("detail", f"R2 {free.r2_train_avg:.2f}, orders {orders}, {elapsed:.0f} s")
    assert free.r2_train_avg >= 95
    assert all(r["status"] == "ok" for r in rows)
    assert orders[-1] <= orders[0]
    assert orders[-1] < 6
    assert elapsed < 300


@criterion(6, "input selection: exactly 5 active inputs")
def test_input_selection(record_property):
    ds, _ = gen_input_selection(seed=1)
    data = Scaler.fit(ds).apply(ds)
    spec = ModelSpec(3, 10, 1, feedthrough=False)
    reg = RegularizationConfig(rho_theta=1e-3, rho_x=1e-3, group_kind="input_groups")
    free = fit(spec, data, TrainConfig(reg=reg, **PROTOCOL))
    rows = sweep(spec, data, TrainConfig(reg=reg, **PROTOCOL), "tau_g",
                 [1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
    hits = [r for r in rows if r["status"] == "ok" and r["active_inputs"] == 5
            and free.r2_train_avg - r["r2_train_avg"] <= 2.0]
    record_property("detail", "active inputs " + str([r["active_inputs"] for r in rows])
                    + f", unpenalized R2 {free.r2_train_avg:.3f}")
    assert hits


@criterion(7, "causal channels: outputs explained, inputs not")
def test_causal(tmp_path, record_property):
    data = tmp_path / "causal.csv"
    assert main(["generate", "causal", "--seed", "1", "--out", str(data)]) == 0
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"n_x": 10},
                               "reg": {"rho_theta": 1e-4, "rho_x": 0.01},
                               "train": {"n_starts": 1, "seed": 1}}))
    rep = tmp_path / "r.json"
    assert main(["causal", "--config", str(cfg), "--data", str(data), "--report", str(rep)]) == 0
    ch = json.loads(rep.read_text())["causal"]["channels"]
    r2 = [c["r2"] for c in ch]
    record_property("detail", "R2 " + " ".join(f"{v:.1f}" for v in r2))
    assert all(v >= 90 for v in r2[:5])
    assert all(v <= 30 for v in r2[5:])
    assert [c["output"] for c in ch] == [True] * 5 + [False] * 5


@criterion(8, "EKF + RTS: textbook oracle, x0 recovery, covariance invariants")
def test_ekf_rts(record_property):
    rng = np.random.default_rng(8)
    sys = random_stable_system(rng, 4, 2, 2, feedthrough=True)
    spec = ModelSpec(4, 2, 2, feedthrough=True)
    p = ModelParams((np.zeros(4),), sys.A, sys.B, sys.C, sys.D)
    U, Y = rng.standard_normal((60, 2)), rng.standard_normal((60, 2))
    Q, R, P0 = 1e-2 * np.eye(4), 0.3 * np.eye(2), np.eye(4)
    _, st = ekf_rts_reconstruct(p, spec, (U, Y), EkfConfig(Q=Q, R=R, P0=P0),
                                SaturationConfig(mode="none"), full_output=True)
    # textbook smoother for every time index: smooth the suffix problems
    ref0, _ = kalman_rts_textbook(sys.A, sys.B, sys.C, sys.D, U, Y, np.zeros(4), P0, Q, R)
    assert_allclose(st.x_smooth[0], ref0, rtol=0, atol=1e-8)
    means = _textbook_smoothed_means(sys, U, Y, P0, Q, R)
    err_means = float(np.max(np.abs(st.x_smooth[:60] - means)))
    for P in list(st.P_filt) + list(st.P_pred) + list(st.P_smooth):
        assert np.array_equal(P, P.T)
        assert np.linalg.eigvalsh(P).min() > 0
    spec2, p2, U2, Y2 = noiseless_rnn_data(np.random.default_rng(0))
    x0 = ekf_rts_reconstruct(p2, spec2, (U2, Y2), EkfConfig(n_epochs=10, R=1e-2))
    err_x0 = float(np.max(np.abs(x0 - p2.x0_list[0])))
    record_property("detail", f"smoothed-mean error {err_means:.1e}, x0 error {err_x0:.1e}")
    assert err_means <= 1e-8
    assert err_x0 <= 1e-2


def _textbook_smoothed_means(sys, U, Y, P0, Q, R):
    A, B, C, D = sys.A, sys.B, sys.C, sys.D
    n, N = A.shape[0], U.shape[0]
    xf, Pf, xp, Pp = [], [], [np.zeros(n)], [P0]
    x, P = np.zeros(n), P0
    for k in range(N):
        K = P @ C.T @ np.linalg.inv(C @ P @ C.T + R)
        x = x + K @ (Y[k] - C @ x - D @ U[k])
        P = (np.eye(n) - K @ C) @ P
        xf.append(x)
        Pf.append(P)
        x, P = A @ x + B @ U[k], A @ P @ A.T + Q
        xp.append(x)
        Pp.append(P)
    xs = [None] * N + [xp[N]]
    for k in range(N - 1, -1, -1):
        G = Pf[k] @ A.T @ np.linalg.inv(Pp[k + 1])
        xs[k] = xf[k] + G @ (xs[k + 1] - xp[k + 1])
    return np.array(xs[:N])


@criterion(9, "p-step EKF prediction with output disturbance")
def test_pstep_prediction(record_property):
    sys = order_reduction_system()
    spec = ModelSpec(6, 2, 2, feedthrough=False)
    p = ModelParams((np.zeros(6),), sys.A, sys.B, sys.C, sys.D)
    ds, _ = gen_order_reduction(seed=9, N=1000, noise_std=0.05)
    U, Y = ds.experiments[0]
    cfg = EkfConfig(Q=0.05 ** 2, R=0.05 ** 2)
    rep = ekf_output_disturbance_predict(p, spec, (U, Y), 10, cfg)
    Yb = Y + np.array([0.5, -0.3])
    aug = ekf_output_disturbance_predict(p, spec, (U, Yb), 1, cfg)
    plain = ekf_output_disturbance_predict(p, spec, (U, Yb), 1, cfg, augment=False)
    record_property("detail", f"R2 p=1 {rep.r2_avg[0]:.2f}, p=10 {rep.r2_avg[-1]:.2f}; biased "
                              f"{aug.r2_avg[0]:.2f} vs {plain.r2_avg[0]:.2f}")
    assert rep.r2_avg[0] > rep.r2_avg[-1]
    assert aug.r2_avg[0] > plain.r2_avg[0]


@criterion(10, "byte-identical fit reports")
def test_reproducible_reports(tmp_path):
    data = tmp_path / "or.csv"
    assert main(["generate", "order_reduction", "--seed", "1", "--out", str(data)]) == 0
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"n_x": 6}, "train": {"n_starts": 2, "seed": 5},
                               "reg": {"rho_theta": 1e-3, "rho_x": 1e-3}}))
    out = []
    for i in range(2):
        rep = tmp_path / f"r{i}.json"
        assert main(["fit", "--config", str(cfg), "--data", str(data),
                     "--out-model", str(tmp_path / f"m{i}.json"), "--report", str(rep)]) == 0
        out.append(rep.read_bytes())
    assert out[0] == out[1]
