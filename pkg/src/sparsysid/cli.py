"""Command-line interface.

Verbs: ``generate``, ``fit``, ``eval``, ``sweep``, ``causal`` and
``reconstruct-x0``.  Exit codes: 0 success, 1 numerical or training failure,
2 usage or I/O error.
"""
import argparse
import hashlib
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .config import load_config
from .datasets import GENERATORS, DataError, export_csv, load_csv, read_sidecar
from .estimation import EstimationError, ekf_output_disturbance_predict, ekf_rts_reconstruct, refine_x0
from .model import NonFiniteError
from .objectives import Scaler
from .serialize import atomic_write_text, dumps, load_model, save_model, write_json
from .trainer import TrainingError, evaluate, fit, sweep

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad arguments or unreadable input; maps to exit code 2."""


def _log(args, msg):
    if getattr(args, "verbose", False):
        print(msg, file=sys.stderr)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_data(path, cfg=None, n_u=None, n_y=None):
    """Read a CSV using channel counts from the sidecar, the config or arguments."""
    if not os.path.exists(path):
        raise UsageError(f"{path}: no such file")
    meta = read_sidecar(path) or {}
    d = cfg["data"] if cfg is not None else {}
    n_u = n_u if n_u is not None else d.get("n_u") if d.get("n_u") is not None else meta.get("n_u")
    n_y = n_y if n_y is not None else d.get("n_y") if d.get("n_y") is not None else meta.get("n_y")
    if n_u is None or n_y is None:
        raise UsageError(f"{path}: channel counts unknown; set data.n_u and data.n_y "
                         "in the config or provide a .meta.json sidecar")
    bounds = d.get("experiment_boundaries") or meta.get("experiment_boundaries")
    try:
        return load_csv(path, int(n_u), int(n_y), bounds)
    except DataError as exc:
        raise UsageError(str(exc)) from None


def _data_info(path, ds):
    return {"file": os.path.basename(path), "sha256": _sha256(path),
            "n_u": ds.n_u, "n_y": ds.n_y, "lengths": ds.lengths,
            "descriptor": ds.descriptor}


def _strip_times(starts):
    return [{k: v for k, v in s.items() if not k.startswith("time_")} for s in starts]


def _prepare(cfg, ds):
    """Split off the test tail (if configured) and scale with training statistics."""
    train_rows = cfg["data"]["train_rows"]
    test = None
    if train_rows is not None:
        if ds.n_experiments != 1:
            raise UsageError("data.train_rows needs a single-experiment dataset")
        if not 0 < int(train_rows) < ds.lengths[0]:
            raise UsageError("data.train_rows must lie inside the data")
        ds, test = ds.split(int(train_rows))
    scaler = None
    if cfg["data"]["scale"]:
        try:
            scaler = Scaler.fit(ds)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        ds = scaler.apply(ds)
        if test is not None:
            test = scaler.apply(test)
    return ds, test, scaler


def _progress(args):
    if not getattr(args, "verbose", False):
        return None

    def cb(start, phase, it, value):
        if it % 100 == 0:
            print(f"start {start} {phase} iter {it} objective {value:.6e}", file=sys.stderr)
    return cb


# ---------------------------------------------------------------------------
# verbs

def cmd_generate(args):
    gen = GENERATORS[args.kind]
    kw = {"seed": args.seed}
    if args.N is not None:
        kw["N"] = args.N
    if args.noise_std is not None:
        kw["noise_std"] = args.noise_std
    ds, _ = gen(**kw)
    try:
        export_csv(ds, args.out)
    except OSError as exc:
        raise UsageError(f"cannot write {args.out}: {exc}") from None
    _log(args, f"wrote {args.out} ({ds.lengths[0]} rows)")
    return EXIT_OK


def _fit_and_report(args, cfg, ds, extra_report=None):
    train, test, scaler = _prepare(cfg, ds)
    spec = cfg.model_spec(train.n_u, train.n_y)
    tcfg = cfg.train(jobs=args.jobs)
    report = {"command": args.command, "version": __version__, "config": cfg.to_dict(),
              "data": _data_info(args.data, ds), "spec": spec.to_dict()}
    try:
        rep = fit(spec, train, tcfg, progress=_progress(args), test_data=test)
    except TrainingError as exc:
        report.update({"status": "failed", "error": str(exc),
                       "starts": _strip_times(exc.diagnostics)})
        return None, report, None, None
    summary = rep.summary()
    summary["starts"] = _strip_times(summary["starts"])
    report.update({"status": "ok", "result": summary})
    if test is not None:
        try:
            ev = evaluate(rep.best_params, spec, test, cfg["eval"]["x0_policy"], tcfg.sat,
                          cfg.ekf(), tcfg.reg.rho_x)
            report["test"] = ev.to_dict()
        except (NonFiniteError, EstimationError) as exc:
            report["test"] = {"status": "failed", "error": str(exc)}
    if extra_report:
        report.update(extra_report)
    return rep, report, spec, scaler


def cmd_fit(args):
    cfg = load_config(args.config)
    ds = _load_data(args.data, cfg)
    rep, report, spec, scaler = _fit_and_report(args, cfg, ds)
    if rep is None:
        if args.report:
            write_json(args.report, report)
        print(report["error"], file=sys.stderr)
        return EXIT_FAIL
    tcfg = cfg.train()
    save_model(args.out_model, spec, rep.v_opt, rep.best_params.n_experiments,
               tcfg.learn_x0, tcfg.sat, scaler)
    if args.report:
        write_json(args.report, report)
        write_json(args.report + ".timings.json", {"timings": rep.timings,
                                                   "starts": [
                                                       {k: v for k, v in s.items()
                                                        if k.startswith("time_") or k == "start"}
                                                       for s in rep.starts]})
    else:
        sys.stdout.write(dumps(report))
    _log(args, f"training R2 avg {rep.r2_train_avg:.4f}")
    return EXIT_OK


def _scaled_for_model(bundle, ds):
    if ds.n_u != bundle.spec.n_u or ds.n_y != bundle.spec.n_y:
        raise UsageError(f"data has {ds.n_u} inputs and {ds.n_y} outputs, model expects "
                         f"{bundle.spec.n_u} and {bundle.spec.n_y}")
    return bundle.scaler.apply(ds) if bundle.scaler is not None else ds


def _read_model(path):
    try:
        return load_model(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read model {path}: {exc}") from None


def cmd_eval(args):
    bundle = _read_model(args.model)
    cfg = load_config(args.config)
    ds = _load_data(args.data, cfg, bundle.spec.n_u, bundle.spec.n_y)
    ds = _scaled_for_model(bundle, ds)
    ekf = cfg.ekf()
    out = {"command": "eval", "version": __version__, "data": _data_info(args.data, ds)}
    ev = evaluate(bundle.params, bundle.spec, ds, args.x0_policy, bundle.sat, ekf, ekf.rho_x)
    out["result"] = ev.to_dict()
    if args.horizon:
        rows = []
        for j in range(ds.n_experiments):
            pr = ekf_output_disturbance_predict(bundle.params, bundle.spec, ds, args.horizon,
                                                ekf, bundle.sat, experiment=j)
            rows.append(pr.rows())
        out["horizon"] = [{"p": p, "r2_avg": float(np.mean([r[i][1] for r in rows]))}
                          for i, (p, _) in enumerate(rows[0])]
        table = "p\tr2_avg\n" + "".join(f"{r['p']}\t{r['r2_avg']!r}\n" for r in out["horizon"])
        if args.table:
            atomic_write_text(args.table, table)
        else:
            sys.stdout.write(table)
    if args.report:
        write_json(args.report, out)
    elif not args.horizon:
        sys.stdout.write(dumps(out))
    return EXIT_OK


def _parse_grid(text):
    try:
        grid = [float(g) for g in text.split(",") if g.strip()]
    except ValueError:
        raise UsageError(f"bad grid {text!r}") from None
    if not grid or any(not g > 0 for g in grid) or grid != sorted(grid):
        raise UsageError("grid must be a non-empty, positive, increasing list")
    return grid


SWEEP_COLUMNS = ("penalty", "status", "r2_train_avg", "effective_order", "active_inputs",
                 "zeros", "loss", "objective")


def cmd_sweep(args):
    grid = _parse_grid(args.grid)
    cfg = load_config(args.config)
    ds = _load_data(args.data, cfg)
    train, _, _ = _prepare(cfg, ds)
    spec = cfg.model_spec(train.n_u, train.n_y)
    rows = sweep(spec, train, cfg.train(jobs=args.jobs), args.param, grid,
                 warm_start=args.warm_start, progress=_progress(args))
    lines = ["\t".join(SWEEP_COLUMNS)]
    for r in rows:
        lines.append("\t".join(repr(r[c]) if isinstance(r.get(c), float) else str(r.get(c, ""))
                               for c in SWEEP_COLUMNS))
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_causal(args):
    cfg = load_config(args.config)
    ds = _load_data(args.data, cfg)
    if ds.n_u != ds.n_y:
        raise UsageError("causal analysis expects the same signal as input and output")
    m = cfg["model"]
    if m["fx_layers"] or m["fy_layers"] or m["feedthrough"]:
        raise UsageError("causal analysis uses a linear model without feedthrough")
    rep, report, spec, _ = _fit_and_report(args, cfg, ds)
    if rep is None:
        print(report["error"], file=sys.stderr)
        return EXIT_FAIL
    thr = args.threshold if args.threshold is not None else cfg["causal"]["threshold"]
    channels = [{"channel": i + 1, "r2": float(r), "output": bool(r >= thr)}
                for i, r in enumerate(rep.r2_train)]
    report["causal"] = {"threshold": thr, "channels": channels}
    text = "channel\tr2\tclass\n" + "".join(
        f"{c['channel']}\t{c['r2']:.4f}\t{'output' if c['output'] else 'input'}\n"
        for c in channels)
    sys.stdout.write(text)
    if args.report:
        write_json(args.report, report)
    return EXIT_OK


def cmd_reconstruct_x0(args):
    bundle = _read_model(args.model)
    cfg = load_config(args.config)
    ds = _load_data(args.data, cfg, bundle.spec.n_u, bundle.spec.n_y)
    ds = _scaled_for_model(bundle, ds)
    ekf = cfg.ekf()
    if args.epochs is not None:
        ekf = replace(ekf, n_epochs=args.epochs)
    out = []
    for j in range(ds.n_experiments):
        x0 = ekf_rts_reconstruct(bundle.params, bundle.spec, ds, ekf, bundle.sat, experiment=j)
        entry = {"experiment": j, "ekf_rts": x0}
        if args.refine:
            entry["refined"] = refine_x0(bundle.params, bundle.spec, ds, x0, ekf.rho_x,
                                         bundle.sat, experiment=j)[0]
        out.append(entry)
    text = dumps({"command": "reconstruct-x0", "version": __version__, "x0": out})
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="sparsysid", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="run configuration (JSON)")
        sp.add_argument("-v", "--verbose", action="store_true")

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    g.add_argument("kind", choices=sorted(GENERATORS))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--N", type=int)
    g.add_argument("--noise-std", type=float)
    g.add_argument("--out", required=True)
    common(g, config=False)

    f = sub.add_parser("fit", help="train a model")
    f.add_argument("--data", required=True)
    f.add_argument("--out-model", required=True)
    f.add_argument("--report")
    f.add_argument("--jobs", type=int, default=1)
    common(f)

    e = sub.add_parser("eval", help="score a model on data")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--x0-policy", choices=("from_fit", "ekf_rts", "refine"), default="from_fit")
    e.add_argument("--horizon", type=int, help="also score EKF p-step predictions, p=1..H")
    e.add_argument("--table", help="write the horizon table here")
    e.add_argument("--report")
    common(e)

    s = sub.add_parser("sweep", help="regularization path")
    s.add_argument("--data", required=True)
    s.add_argument("--param", choices=("tau", "tau_g"), required=True)
    s.add_argument("--grid", required=True, help="comma-separated increasing values")
    s.add_argument("--out")
    s.add_argument("--warm-start", action="store_true")
    s.add_argument("--jobs", type=int, default=1)
    common(s)

    c = sub.add_parser("causal", help="classify channels as outputs or inputs")
    c.add_argument("--data", required=True)
    c.add_argument("--threshold", type=float)
    c.add_argument("--report")
    c.add_argument("--jobs", type=int, default=1)
    common(c)

    r = sub.add_parser("reconstruct-x0", help="estimate initial states by EKF + RTS")
    r.add_argument("--model", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--epochs", type=int)
    r.add_argument("--refine", action="store_true")
    r.add_argument("--out")
    common(r)
    return p


COMMANDS = {"generate": cmd_generate, "fit": cmd_fit, "eval": cmd_eval, "sweep": cmd_sweep,
            "causal": cmd_causal, "reconstruct-x0": cmd_reconstruct_x0}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ValueError, OSError) as exc:
        # ConfigError, DataError and ModelError are ValueErrors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, NonFiniteError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
