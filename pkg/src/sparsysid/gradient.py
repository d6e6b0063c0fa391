"""Condensed simulation loss and its exact gradient.

The loss of a flat parameter vector is the mean squared open-loop
simulation error, averaged per sample over all experiments:

    f(v) = sum_j sum_k ||y_k^j - yhat_k^j||^2 / sum_j N_j

Gradients come from one reverse sweep through the state recurrence per
experiment (see :mod:`sparsysid.kernels`).  Hard saturation contributes the
clamp subgradient (zero outside the band).
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import NonFiniteError, ParamLayout, SaturationConfig, unpack_params


@dataclass(frozen=True)
class LossGradient:
    value: float
    grad: np.ndarray


class SimulationLoss:
    """Callable ``v -> (value, grad)`` for a fixed spec and dataset.

    Parameters
    ----------
    spec : ModelSpec
    data : Dataset
    sat : SaturationConfig, optional
    learn_x0 : bool
        Whether per-experiment initial states are part of ``v``.
    base : ModelParams, optional
        Supplies values of entries that are not in ``v``.
    """

    def __init__(self, spec, data, sat=None, learn_x0=True, base=None):
        self.spec = spec
        self.data = data
        self.sat = sat or SaturationConfig()
        self.learn_x0 = learn_x0
        self.base = base
        self.layout = ParamLayout(spec, data.n_experiments, learn_x0)
        self.n_total = sum(U.shape[0] for U, _ in data.experiments)
        if self.n_total == 0:
            raise ValueError("dataset has no samples")
        self.n_evals = 0
        # position of each network block inside the flattened theta vectors
        self._net_pos = {}
        for prefix, sizes in (("x", spec.fx_sizes), ("y", spec.fy_sizes)):
            pos = 0
            for i in range(len(sizes) - 1):
                nw = sizes[i + 1] * sizes[i]
                self._net_pos[f"W{prefix}{i + 1}"] = (pos, nw)
                self._net_pos[f"b{prefix}{i + 1}"] = (pos + nw, sizes[i + 1])
                pos += nw + sizes[i + 1]

    def params(self, v):
        return unpack_params(v, self.spec, self.data.n_experiments, self.learn_x0, self.base)

    def _flat_grad(self, dense):
        g = np.zeros(self.layout.size)
        for b in self.layout.blocks:
            if b.count == 0:
                continue
            if b.name.startswith("x0["):
                arr = dense["x0"][int(b.name[3:-1])]
            elif b.name in ("A", "B", "C", "D"):
                arr = dense[b.name]
            else:
                start, n = self._net_pos[b.name]
                arr = dense["theta_x" if b.name[1] == "x" else "theta_y"][start:start + n]
            g[b.offset:b.offset + b.count] = np.ravel(arr)[b.free]
        return g

    def value(self, v):
        return self(v, need_grad=False)[0]

    def __call__(self, v, need_grad=True):
        self.n_evals += 1
        p = self.params(v)
        total = 0.0
        acc = None
        x0_grads = []
        for j, (U, Y) in enumerate(self.data.experiments):
            sse, bad, g = kernels.loss_grad(p, self.spec, p.x0_list[j], U, Y, self.sat)
            if bad >= 0:
                raise NonFiniteError(bad, j)
            total += sse
            x0_grads.append(g.pop("x0"))
            if acc is None:
                acc = g
            else:
                for key in acc:
                    acc[key] = acc[key] + g[key]
        acc["x0"] = x0_grads
        scale = 1.0 / self.n_total
        value = total * scale
        if not np.isfinite(value):
            raise NonFiniteError(-1, 0)
        if not need_grad:
            return value, None
        for key in ("A", "B", "C", "D", "theta_x", "theta_y"):
            acc[key] = acc[key] * scale
        acc["x0"] = [g * scale for g in x0_grads]
        return value, self._flat_grad(acc)


def loss_and_grad(v, spec, data, sat=None, learn_x0=True, base=None):
    """Loss value and exact gradient at the flat parameter vector ``v``.

    Raises
    ------
    NonFiniteError
        When a simulated state or output is not finite; carries the step
        index and experiment.
    """
    value, grad = SimulationLoss(spec, data, sat, learn_x0, base)(v)
    return LossGradient(value, grad)
