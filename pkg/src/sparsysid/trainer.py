"""Training pipeline: initialization, multi-start, Adam warm start, splitting,
L-BFGS-B refinement, model selection and sparsity diagnostics."""
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .estimation import EkfConfig, ekf_rts_reconstruct, refine_x0
from .gradient import SimulationLoss
from .model import (NonFiniteError, SaturationConfig, pack_params,
                    random_params, simulate)
from .objectives import (RegularizationConfig, build_groups, r2_score,
                         regularizer_subgrad, regularizer_value)
from .optim import AdamOptions, LbfgsbOptions, adam_minimize, lbfgsb_minimize
from .split import build_elastic_net_split, build_group_lasso_split

X0_MODES = ("free_per_experiment", "fixed_zero")
SELECTIONS = ("r2", "loss", "leaderboard")


class TrainingError(RuntimeError):
    """Every start failed; ``diagnostics`` holds one entry per start."""

    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


@dataclass(frozen=True)
class TrainConfig:
    """Settings of :func:`fit`.

    ``selection`` picks the best start by training R^2 (``r2``), by the
    penalized objective (``loss``), or by R^2 on a test set
    (``leaderboard``; this leaks test information and is off by default).
    ``n_presample > 0`` replaces each start's random draw by the best of that
    many draws in terms of the unpenalized loss.
    """

    n_starts: int = 1
    seed: int = 0
    adam: AdamOptions = field(default_factory=AdamOptions)
    lbfgsb: LbfgsbOptions = field(default_factory=LbfgsbOptions)
    reg: RegularizationConfig = field(default_factory=RegularizationConfig)
    sat: SaturationConfig = field(default_factory=SaturationConfig)
    init_A_scale: float = 0.5
    init_std: float = 0.1
    x0_mode: str = "free_per_experiment"
    zero_threshold: float = 1e-6
    selection: str = "r2"
    n_presample: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if not (self.zero_threshold > 0 and self.init_std > 0):
            raise ValueError("zero_threshold and init_std must be > 0")
        if self.x0_mode not in X0_MODES:
            raise ValueError(f"x0_mode must be one of {X0_MODES}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}")
        if self.n_presample < 0 or self.jobs < 1:
            raise ValueError("n_presample must be >= 0 and jobs >= 1")

    @property
    def learn_x0(self):
        return self.x0_mode == "free_per_experiment"

    def to_dict(self):
        return {
            "n_starts": self.n_starts, "seed": self.seed,
            "adam": dict(vars(self.adam)), "lbfgsb": dict(vars(self.lbfgsb)),
            "reg": self.reg.to_dict(), "sat": self.sat.to_dict(),
            "init_A_scale": self.init_A_scale, "init_std": self.init_std,
            "x0_mode": self.x0_mode, "zero_threshold": self.zero_threshold,
            "selection": self.selection, "n_presample": self.n_presample,
        }


@dataclass
class FitReport:
    """Outcome of :func:`fit`.

    ``sparsity`` is ``(zeros, total)`` over the free network parameters;
    ``effective_order`` counts state groups whose largest entry exceeds the
    zero threshold, ``active_inputs`` the same for input groups.
    """

    best_params: object
    v_opt: np.ndarray
    r2_train: np.ndarray
    r2_train_avg: float
    final_loss: float
    objective: float
    sparsity: tuple
    effective_order: int
    active_inputs: int
    best_start: int
    starts: list
    timings: dict
    saturation_in_evaluation: bool = True

    def summary(self):
        return {
            "r2_train": [float(v) for v in self.r2_train],
            "r2_train_avg": float(self.r2_train_avg),
            "final_loss": float(self.final_loss),
            "objective": float(self.objective),
            "sparsity": {"zeros": int(self.sparsity[0]), "total": int(self.sparsity[1])},
            "effective_order": int(self.effective_order),
            "active_inputs": int(self.active_inputs),
            "best_start": int(self.best_start),
            "saturation_in_evaluation": self.saturation_in_evaluation,
            "starts": self.starts,
        }


# ---------------------------------------------------------------------------
# helpers

class _Problem:
    """Everything a start needs; picklable for process pools."""

    def __init__(self, spec, data, cfg, init=None):
        self.spec = spec
        self.data = data
        self.cfg = cfg
        self.init = init
        self.loss = SimulationLoss(spec, data, cfg.sat, cfg.learn_x0)
        self.layout = self.loss.layout
        self.x0_idx = self.layout.x0_indices
        reg = cfg.reg
        self.groups = (build_groups(spec, reg.group_kind, data.n_experiments, cfg.learn_x0)
                       if reg.group_active else None)

    def penalized(self, v):
        f, g = self.loss(v)
        reg = self.cfg.reg
        return (f + regularizer_value(v, reg, self.groups, self.x0_idx),
                g + regularizer_subgrad(v, reg, self.groups, self.x0_idx))

    def split_indices(self):
        reg = self.cfg.reg
        theta = self.layout.theta_indices
        idx = set()
        if reg.tau > 0:
            idx.update(theta.tolist())
        if self.groups is not None:
            idx.update(int(i) for i in self.groups.all_indices())
        idx.difference_update(self.x0_idx.tolist())
        return np.array(sorted(idx), dtype=np.int64)

    def initial_vector(self, rng):
        cfg = self.cfg
        if cfg.n_presample > 0:
            return _presample(self, rng, cfg.n_presample)[0]
        return _draw(self, rng)


def _draw(prob, rng):
    cfg = prob.cfg
    p = random_params(prob.spec, rng, prob.data.n_experiments, cfg.init_A_scale, cfg.init_std)
    return pack_params(p, prob.spec, cfg.learn_x0)


def _presample(prob, rng, n):
    best_v, best_f, diag = None, np.inf, []
    for _ in range(n):
        v = _draw(prob, rng)
        try:
            f = prob.loss.value(v)
        except NonFiniteError as exc:
            diag.append(str(exc))
            continue
        if f < best_f:
            best_v, best_f = v, f
    if best_v is None:
        raise TrainingError("all presampled initial conditions are non-finite", diag)
    return best_v, best_f


def multi_start_presample(spec, data, cfg, n_samples, rng=None):
    """Draw ``n_samples`` random initial parameter vectors and return the one
    with the lowest unpenalized simulation loss (no optimization).

    Draws come from ``rng`` (default: a generator seeded with ``cfg.seed``),
    so a larger ``n_samples`` extends the same sequence of candidates.

    Returns
    -------
    v : numpy.ndarray
    loss : float
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    return _presample(_Problem(spec, data, cfg), rng, n_samples)


def _stacked_prediction(params, spec, data, sat):
    Ys, Yh = [], []
    for j, (U, Y) in enumerate(data.experiments):
        Ys.append(Y)
        Yh.append(simulate(params, spec, U, sat, experiment=j)[1])
    return np.vstack(Ys), np.vstack(Yh)


def _count_active(groups, v, thr):
    if groups is None or not len(groups):
        return 0
    return int(sum(1 for g in groups.groups if len(g) and np.max(np.abs(v[g])) > thr))


def _phase_callback(progress, index, phase):
    if progress is None:
        return None
    return lambda it, f, pg: progress(index, phase, it, f)


def _run_start(prob, index, seed_seq, progress=None):
    """One start: draw, Adam, split, L-BFGS-B, recover."""
    cfg = prob.cfg
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed_seq)
    summary = {"start": index, "status": "ok"}
    try:
        v0 = prob.init.copy() if prob.init is not None else prob.initial_vector(rng)
        v = v0
        if cfg.adam.iters > 0:
            ra = adam_minimize(prob.penalized, v0, opts=cfg.adam,
                               callback=_phase_callback(progress, index, "adam"))
            v = ra.x_opt
            summary["adam_objective"] = float(ra.f_opt)
            summary["adam_status"] = ra.status
        t1 = time.perf_counter()
        reg = cfg.reg
        S = prob.split_indices()
        n = prob.layout.size
        if S.size:
            if reg.group_active:
                sp = build_group_lasso_split(prob.loss, reg, prob.groups, S, n, prob.x0_idx)
            else:
                sp = build_elastic_net_split(prob.loss, reg, S, n, prob.x0_idx)
            w0 = sp.lift(v)
            lo, hi, fun = sp.lower, sp.upper, sp
        else:
            ridge = np.full(n, reg.rho_theta)
            ridge[prob.x0_idx] = reg.rho_x

            def fun(x):
                f, g = prob.loss(x)
                return f + 0.5 * float(ridge @ (x * x)), g + ridge * x
            w0, lo, hi, sp = v, None, None, None
        rl = lbfgsb_minimize(fun, w0, lo, hi, cfg.lbfgsb,
                             callback=_phase_callback(progress, index, "lbfgsb"))
        v = sp.recover(rl.x_opt) if sp is not None else rl.x_opt
        if sp is not None:
            summary["complementarity"] = sp.complementarity(rl.x_opt)
        t2 = time.perf_counter()
        loss = prob.loss.value(v)
        params = prob.loss.params(v)
        Y, Yh = _stacked_prediction(params, prob.spec, prob.data, cfg.sat)
        r2 = np.atleast_1d(r2_score(Y, Yh))
        summary.update({
            "lbfgsb_status": rl.status, "lbfgsb_evals": int(rl.n_fun_evals),
            "projected_grad_norm": float(rl.projected_grad_norm),
            "loss": float(loss),
            "objective": float(loss + regularizer_value(v, reg, prob.groups, prob.x0_idx)),
            "r2_avg": float(np.mean(r2)),
            "time_adam": t1 - t0, "time_lbfgsb": t2 - t1,
        })
        return summary, v, r2
    except (FloatingPointError, TrainingError) as exc:
        summary.update({"status": "failed", "error": str(exc)})
        return summary, None, None


def _seed_sequences(seed, n):
    return np.random.SeedSequence(seed).spawn(n)


def fit(spec, data, cfg=None, progress=None, test_data=None, init=None):
    """Fit ``spec`` to ``data`` with multi-start Adam + L-BFGS-B.

    Parameters
    ----------
    spec : ModelSpec
    data : Dataset
        Scaled training data.
    cfg : TrainConfig, optional
    progress : callable, optional
        ``progress(start, phase, iteration, value)``; only used with
        ``cfg.jobs == 1``.
    test_data : Dataset, optional
        Needed for ``selection="leaderboard"``.
    init : array_like, optional
        Starting flat vector for every start instead of a random draw
        (warm start for regularization paths).

    Returns
    -------
    FitReport

    Raises
    ------
    TrainingError
        If every start fails.
    """
    cfg = cfg or TrainConfig()
    if cfg.selection == "leaderboard" and test_data is None:
        raise ValueError("leaderboard selection needs test_data")
    t0 = time.perf_counter()
    prob = _Problem(spec, data, cfg, None if init is None else np.asarray(init, dtype=float))
    seqs = _seed_sequences(cfg.seed, cfg.n_starts)
    if cfg.jobs > 1 and cfg.n_starts > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            results = list(ex.map(_run_start, [prob] * cfg.n_starts,
                                  range(cfg.n_starts), seqs))
    else:
        results = [_run_start(prob, i, s, progress) for i, s in enumerate(seqs)]
    ok = [i for i, (_, v, _) in enumerate(results) if v is not None]
    starts = [r[0] for r in results]
    if not ok:
        raise TrainingError("all starts failed", starts)
    if cfg.selection == "leaderboard":
        for i in ok:
            params = prob.loss.params(results[i][1])
            r = evaluate(params, spec, test_data, "from_fit", cfg.sat) \
                if test_data.n_experiments <= params.n_experiments else \
                evaluate(params, spec, test_data, "ekf_rts", cfg.sat)
            starts[i]["r2_test_avg"] = r.r2_avg
        best = max(ok, key=lambda i: (starts[i]["r2_test_avg"], -i))
    elif cfg.selection == "loss":
        best = min(ok, key=lambda i: (starts[i]["objective"], i))
    else:
        best = max(ok, key=lambda i: (starts[i]["r2_avg"], -i))
    summary, v, r2 = results[best]
    layout = prob.layout
    thr = cfg.zero_threshold
    net = layout.network_indices()
    zeros = int(np.sum(np.abs(v[net]) < thr))
    state_groups = build_groups(spec, "state_groups", data.n_experiments, cfg.learn_x0)
    input_groups = (build_groups(spec, "input_groups", data.n_experiments, cfg.learn_x0)
                    if spec.n_u > 0 else None)
    t1 = time.perf_counter()
    return FitReport(
        best_params=prob.loss.params(v), v_opt=v, r2_train=r2,
        r2_train_avg=float(np.mean(r2)), final_loss=summary["loss"],
        objective=summary["objective"], sparsity=(zeros, int(net.size)),
        effective_order=_count_active(state_groups, v, thr),
        active_inputs=_count_active(input_groups, v, thr),
        best_start=best, starts=starts,
        timings={"total": t1 - t0,
                 "adam": float(sum(s.get("time_adam", 0.0) for s in starts)),
                 "lbfgsb": float(sum(s.get("time_lbfgsb", 0.0) for s in starts))})


@dataclass(frozen=True)
class EvalReport:
    r2: np.ndarray
    r2_avg: float
    x0_list: tuple
    policy: str

    def to_dict(self):
        return {"policy": self.policy, "r2": [float(v) for v in self.r2],
                "r2_avg": float(self.r2_avg),
                "x0": [np.asarray(x).tolist() for x in self.x0_list]}


def evaluate(params, spec, test_data, x0_policy="from_fit", sat=None, ekf=None, rho_x=0.0):
    """Open-loop R^2 of ``params`` on ``test_data``.

    ``x0_policy``:

    * ``from_fit``: the fitted initial state of each experiment;
    * ``ekf_rts``: reconstructed by EKF + RTS smoothing on the data itself;
    * ``refine``: the ``ekf_rts`` estimate polished by local optimization.
    """
    sat = sat or SaturationConfig()
    if x0_policy not in ("from_fit", "ekf_rts", "refine"):
        raise ValueError(f"unknown x0 policy {x0_policy!r}")
    if test_data.n_u != spec.n_u or test_data.n_y != spec.n_y:
        raise ValueError(f"data has {test_data.n_u} inputs and {test_data.n_y} outputs, "
                         f"model expects {spec.n_u} and {spec.n_y}")
    ekf = ekf or EkfConfig(rho_x=rho_x)
    x0s = []
    for j in range(test_data.n_experiments):
        if x0_policy == "from_fit":
            if j >= params.n_experiments:
                raise ValueError("from_fit needs one fitted initial state per experiment")
            x0 = params.x0_list[j]
        else:
            x0 = ekf_rts_reconstruct(params, spec, test_data, ekf, sat, experiment=j)
            if x0_policy == "refine":
                x0 = refine_x0(params, spec, test_data, x0, rho_x, sat, experiment=j)[0]
        x0s.append(np.asarray(x0, dtype=float))
    p = params.replace(x0_list=tuple(x0s))
    Y, Yh = _stacked_prediction(p, spec, test_data, sat)
    r2 = np.atleast_1d(r2_score(Y, Yh))
    return EvalReport(r2, float(np.mean(r2)), tuple(x0s), x0_policy)


def sweep(spec, data, cfg, param, grid, warm_start=False, progress=None):
    """Fit once per value of ``param`` (``tau`` or ``tau_g``) in ``grid``.

    Each point uses ``cfg.n_starts`` starts.  With ``warm_start`` the grid is
    traversed from the largest value down and every fit starts from the
    previous solution (single start per point).

    Returns
    -------
    list of dict
        One row per grid value in increasing order, with ``status`` ``ok``
        or ``failed``; successful rows also carry ``report``.
    """
    if param not in ("tau", "tau_g"):
        raise ValueError("param must be 'tau' or 'tau_g'")
    grid = [float(g) for g in grid]
    if not grid or any(g < 0 for g in grid):
        raise ValueError("grid must be non-empty and non-negative")
    order = sorted(grid, reverse=warm_start)
    rows = {}
    init = None
    for val in order:
        changes = {param: val}
        if param == "tau_g" and val > 0 and cfg.reg.group_kind == "none":
            changes["group_kind"] = "state_groups"
        reg = replace(cfg.reg, **changes)
        c = replace(cfg, reg=reg, n_starts=1 if (warm_start and init is not None) else cfg.n_starts)
        try:
            rep = fit(spec, data, c, progress=progress, init=init)
        except TrainingError as exc:
            rows[val] = {"penalty": val, "status": "failed", "error": str(exc)}
            continue
        if warm_start:
            init = rep.v_opt
        rows[val] = {"penalty": val, "status": "ok", "r2_train_avg": rep.r2_train_avg,
                     "effective_order": rep.effective_order,
                     "active_inputs": rep.active_inputs,
                     "zeros": rep.sparsity[0], "loss": rep.final_loss,
                     "objective": rep.objective, "report": rep}
    return [rows[v] for v in sorted(rows)]
