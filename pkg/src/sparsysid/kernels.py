"""Backend selection for the simulation / BPTT kernels.

The compiled extension is used when importable; set ``SPARSYSID_KERNEL=python``
to force the NumPy fallback.  :func:`use_backend` switches at runtime (used by
the benchmark and the cross-backend tests).
"""
import os

import numpy as np

from . import _pykernels
from .model import ACTIVATIONS, flatten_net

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def _default():
    want = os.environ.get("SPARSYSID_KERNEL", "").strip().lower()
    if want:
        if want not in _BACKENDS:
            raise ImportError(f"SPARSYSID_KERNEL={want!r} is not available "
                              f"(have {available_backends()})")
        return want
    return "cython" if "cython" in _BACKENDS else "python"


BACKEND = _default()
_impl = _BACKENDS[BACKEND]


def use_backend(name):
    """Select the kernel backend; returns the previous backend name."""
    global BACKEND, _impl
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r} (have {available_backends()})")
    prev = BACKEND
    BACKEND, _impl = name, _BACKENDS[name]
    return prev


def _args(params, spec, sat):
    return (params.A, params.B, params.C, params.D,
            flatten_net(params.theta_x), np.asarray(spec.fx_sizes, dtype=np.int64),
            flatten_net(params.theta_y), np.asarray(spec.fy_sizes, dtype=np.int64))


def simulate(params, spec, x0, U, sat):
    A, B, C, D, thx, szx, thy, szy = _args(params, spec, sat)
    return _impl.simulate(np.asarray(x0, float), A, B, C, D, thx, szx, thy, szy, U,
                          sat.vector(spec.n_x), sat.mode_code, float(sat.gamma),
                          ACTIVATIONS.index(spec.activation), int(spec.fy_uses_u))


def loss_grad(params, spec, x0, U, Y, sat):
    """Sum of squared errors of one experiment and dense gradients.

    Returns
    -------
    sse, bad, grads
        ``grads`` maps ``x0``, ``A``, ``B``, ``C``, ``D``, ``theta_x`` and
        ``theta_y`` to arrays of the corresponding dense shapes.
    """
    A, B, C, D, thx, szx, thy, szy = _args(params, spec, sat)
    sse, bad, gx0, gA, gB, gC, gD, gthx, gthy = _impl.loss_grad(
        np.asarray(x0, float), A, B, C, D, thx, szx, thy, szy, U, Y,
        sat.vector(spec.n_x), sat.mode_code, float(sat.gamma),
        ACTIVATIONS.index(spec.activation), int(spec.fy_uses_u))
    return sse, bad, {"x0": gx0, "A": gA, "B": gB, "C": gC, "D": gD,
                      "theta_x": gthx, "theta_y": gthy}
