"""Run configuration files (JSON) for the command-line interface.

Every key is optional.  Unknown sections or keys are rejected so that typos
do not silently fall back to defaults.  The README documents every key
with an annotated example; ``docs/example_config.json`` is a ready-to-use copy.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .estimation import EkfConfig
from .model import ModelSpec, SaturationConfig, block_shapes
from .objectives import RegularizationConfig
from .optim import AdamOptions, LbfgsbOptions
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid configuration file."""


SCHEMA = {
    "model": {"n_x": 2, "fx_layers": [], "fy_layers": [], "activation": "swish",
              "feedthrough": False, "structure_mask": None},
    "train": {"n_starts": 1, "seed": 0, "init_A_scale": 0.5, "init_std": 0.1,
              "x0_mode": "free_per_experiment", "zero_threshold": 1e-6,
              "selection": "r2", "n_presample": 0},
    "adam": {"iters": 1000, "learning_rate": 0.01, "beta1": 0.9, "beta2": 0.999,
             "eps": 1e-8, "track_best": True, "max_nonfinite": 50},
    "lbfgsb": {"memory": 10, "max_fun_evals": 1000, "max_iters": 100000,
               "grad_tol": 1e-8, "ftol": 1e-10, "c1": 1e-4, "c2": 0.9,
               "max_ls_evals": 20},
    "reg": {"rho_theta": 0.0, "rho_x": 0.0, "tau": 0.0, "tau_g": 0.0,
            "epsilon": 1e-16, "group_kind": "none"},
    "sat": {"x_sat": 1e4, "mode": "hard", "gamma": 10.0},
    "ekf": {"n_epochs": 1, "Q": 1e-8, "R": 1.0, "P0": None, "x0_init": None},
    "data": {"n_u": None, "n_y": None, "experiment_boundaries": None, "scale": True,
             "train_rows": None},
    "eval": {"x0_policy": "ekf_rts"},
    "causal": {"threshold": 50.0},
}


@dataclass
class RunConfig:
    """Resolved configuration: the raw sections with defaults filled in."""

    sections: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.sections[key]

    def to_dict(self):
        return json.loads(json.dumps(self.sections))

    # -- typed views ---------------------------------------------------------
    def model_spec(self, n_u, n_y):
        m = self["model"]
        spec = ModelSpec(int(m["n_x"]), int(n_u), int(n_y), tuple(m["fx_layers"]),
                         tuple(m["fy_layers"]), m["activation"], bool(m["feedthrough"]))
        mask = m.get("structure_mask")
        if mask:
            shapes = dict(block_shapes(spec))
            full = {}
            for name, val in mask.items():
                if name not in shapes:
                    raise ConfigError(f"model.structure_mask: unknown block {name!r}")
                if val == "diagonal":
                    arr = np.eye(*shapes[name], dtype=bool)
                elif isinstance(val, bool):
                    arr = np.full(shapes[name], val)
                else:
                    arr = np.asarray(val, dtype=bool)
                full[name] = arr
            spec = ModelSpec(spec.n_x, spec.n_u, spec.n_y, spec.fx_layers, spec.fy_layers,
                             spec.activation, spec.feedthrough, full)
        return spec

    def reg(self):
        return RegularizationConfig(**self["reg"])

    def sat(self):
        s = dict(self["sat"])
        s["x_sat"] = np.asarray(s["x_sat"], dtype=float)
        return SaturationConfig(**s)

    def train(self, jobs=1):
        t = self["train"]
        return TrainConfig(adam=AdamOptions(**self["adam"]),
                           lbfgsb=LbfgsbOptions(**self["lbfgsb"]),
                           reg=self.reg(), sat=self.sat(), jobs=jobs, **t)

    def ekf(self):
        e = dict(self["ekf"])
        return EkfConfig(rho_x=self["reg"]["rho_x"], **e)


def resolve(raw):
    """Merge ``raw`` (a dict) with the defaults, rejecting unknown keys."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    out = {}
    for section in raw:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section {section!r}")
    for section, defaults in SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section {section!r} must be an object")
        for key in given:
            if key not in defaults:
                raise ConfigError(f"unknown key {section}.{key}")
        merged = json.loads(json.dumps(defaults))
        merged.update(given)
        out[section] = merged
    cfg = RunConfig(out)
    try:
        # validate by constructing the typed objects once
        cfg.reg()
        cfg.sat()
        cfg.train()
        cfg.ekf()
        cfg.model_spec(1, 1) if not out["model"]["structure_mask"] else None
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if out["eval"]["x0_policy"] not in ("from_fit", "ekf_rts", "refine"):
        raise ConfigError("eval.x0_policy must be from_fit, ekf_rts or refine")
    return cfg


def load_config(path):
    if path is None:
        return resolve({})
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return resolve(raw)
