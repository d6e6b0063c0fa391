"""JSON persistence of models and reports.

Floats are written with ``repr`` precision (the :mod:`json` default), so a
saved model reloads bit-exactly.  Files are written to a temporary name and
renamed into place.
"""
import json
import os
from dataclasses import dataclass

import numpy as np

from . import __version__
from .model import ModelSpec, SaturationConfig, unpack_params
from .objectives import Scaler

MODEL_FORMAT = "sparsysid-model/1"


def to_jsonable(obj):
    """Convert numpy scalars/arrays (recursively) into plain Python types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def dumps(obj):
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def atomic_write_text(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, obj):
    atomic_write_text(path, dumps(obj))


@dataclass(frozen=True)
class ModelBundle:
    spec: ModelSpec
    params: object
    sat: SaturationConfig
    scaler: Scaler = None
    learn_x0: bool = True


def model_to_dict(spec, v, n_experiments, learn_x0, sat, scaler=None, extra=None):
    d = {
        "format": MODEL_FORMAT,
        "version": __version__,
        "spec": spec.to_dict(),
        "n_experiments": int(n_experiments),
        "learn_x0": bool(learn_x0),
        "flat": [float(x) for x in np.asarray(v, dtype=float)],
        "saturation": sat.to_dict(),
        "scaling": None if scaler is None else scaler.to_dict(),
    }
    if extra:
        d.update(extra)
    return d


def save_model(path, spec, v, n_experiments, learn_x0, sat, scaler=None, extra=None):
    """Write a model file: spec, flat free-parameter vector, saturation, scaling."""
    write_json(path, model_to_dict(spec, v, n_experiments, learn_x0, sat, scaler, extra))


def load_model(path):
    """Read a model written by :func:`save_model`.

    Raises
    ------
    ValueError
        If the file is not a model file of a supported format.
    """
    with open(path) as fh:
        d = json.load(fh)
    if not isinstance(d, dict) or d.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    spec = ModelSpec.from_dict(d["spec"])
    params = unpack_params(np.asarray(d["flat"], dtype=float), spec,
                           d["n_experiments"], d["learn_x0"])
    sat_d = d["saturation"]
    sat = SaturationConfig(x_sat=np.asarray(sat_d["x_sat"], dtype=float),
                           mode=sat_d["mode"], gamma=sat_d["gamma"])
    scaler = Scaler.from_dict(d["scaling"]) if d.get("scaling") else None
    return ModelBundle(spec, params, sat, scaler, d["learn_x0"])
