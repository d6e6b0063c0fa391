"""Losses, elastic-net and group-Lasso penalties, fit scores and scaling."""
from dataclasses import dataclass, field

import numpy as np

from .datasets import Dataset
from .model import ParamLayout

GROUP_KINDS = ("none", "state_groups", "input_groups")


@dataclass(frozen=True)
class RegularizationConfig:
    """Weights of the penalty

        r(v) = rho_theta/2 ||Theta||^2 + rho_x/2 ||x0||^2 + tau ||Theta||_1
               + tau_g sum_i ||v[group_i]||_2

    ``Theta`` is every free parameter except the initial states.  ``epsilon``
    is the small l1 weight added on split variables when ``tau_g > 0``.
    """

    rho_theta: float = 0.0
    rho_x: float = 0.0
    tau: float = 0.0
    tau_g: float = 0.0
    epsilon: float = 1e-16
    group_kind: str = "none"

    def __post_init__(self):
        for name in ("rho_theta", "rho_x", "tau", "tau_g"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if self.group_kind not in GROUP_KINDS:
            raise ValueError(f"unknown group_kind {self.group_kind!r}")
        if self.tau_g > 0 and not self.epsilon > 0:
            raise ValueError("epsilon must be > 0 when tau_g > 0")
        if self.tau_g > 0 and self.group_kind == "none":
            raise ValueError("tau_g > 0 needs group_kind state_groups or input_groups")

    @property
    def nonsmooth(self):
        return self.tau > 0 or self.group_active

    @property
    def group_active(self):
        return self.tau_g > 0 and self.group_kind != "none"

    def to_dict(self):
        return {k: getattr(self, k) for k in
                ("rho_theta", "rho_x", "tau", "tau_g", "epsilon", "group_kind")}


@dataclass(frozen=True)
class GroupIndexSet:
    groups: list = field(default_factory=list)
    kind: str = "none"

    def __len__(self):
        return len(self.groups)

    def all_indices(self):
        if not self.groups:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(self.groups))

    def norms(self, v, ord=2):
        v = np.asarray(v)
        return np.array([np.linalg.norm(v[g], ord) if len(g) else 0.0 for g in self.groups])


def mse_loss(y_true, y_pred):
    """Mean over time of the squared Euclidean output error."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.ndim == 1:
        y_true, y_pred = y_true[:, None], y_pred[:, None]
    return float(np.sum((y_true - y_pred) ** 2) / y_true.shape[0])


def build_groups(spec, kind, n_experiments=1, learn_x0=True):
    """Index sets of the group-Lasso penalty in the flat parameter vector.

    ``state_groups``: group ``i`` gathers ``x0_i`` (every experiment), row and
    column ``i`` of ``A``, row ``i`` of ``B``, column ``i`` of ``C``, column
    ``i`` of the first-layer weights of both networks, and row ``i`` plus
    bias entry ``i`` of the last layer of ``f_x``.

    ``input_groups``: group ``i`` gathers column ``i`` of ``B`` and ``D`` and
    column ``n_x + i`` of the first-layer weights of both networks.

    Masked-fixed entries are skipped.
    """
    if kind not in ("state_groups", "input_groups"):
        raise ValueError(f"unknown group kind {kind!r}")
    if kind == "input_groups" and spec.n_u < 1:
        raise ValueError("input_groups need n_u >= 1")
    layout = ParamLayout(spec, n_experiments, learn_x0)
    idx = {b.name: b.flat_indices() for b in layout.blocks}
    n_x = spec.n_x
    groups = []
    if kind == "state_groups":
        Lx = len(spec.fx_sizes) - 1
        for i in range(n_x):
            parts = []
            if learn_x0:
                parts += [idx[f"x0[{j}]"][i:i + 1] for j in range(n_experiments)]
            parts += [idx["A"][i, :], idx["A"][:, i], idx["B"][i, :], idx["C"][:, i]]
            if "Wx1" in idx:
                parts.append(idx["Wx1"][:, i])
            if "Wy1" in idx:
                parts.append(idx["Wy1"][:, i])
            if Lx > 0:
                parts += [idx[f"Wx{Lx}"][i, :], idx[f"bx{Lx}"][i:i + 1]]
            groups.append(_unique_free(parts))
    else:
        for i in range(spec.n_u):
            parts = [idx["B"][:, i]]
            if "D" in idx:
                parts.append(idx["D"][:, i])
            if "Wx1" in idx:
                parts.append(idx["Wx1"][:, n_x + i])
            if "Wy1" in idx and spec.fy_uses_u:
                parts.append(idx["Wy1"][:, n_x + i])
            groups.append(_unique_free(parts))
    return GroupIndexSet(groups, kind)


def _unique_free(parts):
    flat = np.concatenate([np.ravel(p) for p in parts])
    flat = flat[flat >= 0]
    # keep first occurrence order (A_ii appears in both row and column)
    _, first = np.unique(flat, return_index=True)
    return flat[np.sort(first)].astype(np.int64)


def _theta_mask(n, x0_indices):
    mask = np.ones(n, dtype=bool)
    mask[np.asarray(x0_indices, dtype=np.int64)] = False
    return mask


def regularizer_value(v, cfg, groups=None, x0_indices=()):
    """Value of the elastic-net plus group-Lasso penalty at ``v``."""
    v = np.asarray(v, dtype=float)
    th = _theta_mask(v.size, x0_indices)
    val = 0.5 * cfg.rho_theta * float(v[th] @ v[th])
    val += 0.5 * cfg.rho_x * float(v[~th] @ v[~th])
    val += cfg.tau * float(np.abs(v[th]).sum())
    if cfg.tau_g > 0 and groups is not None:
        val += cfg.tau_g * float(groups.norms(v).sum())
    return val


def regularizer_subgrad(v, cfg, groups=None, x0_indices=()):
    """A subgradient of :func:`regularizer_value` (zero on nonsmooth kinks)."""
    v = np.asarray(v, dtype=float)
    th = _theta_mask(v.size, x0_indices)
    g = np.where(th, cfg.rho_theta * v, cfg.rho_x * v)
    g[th] += cfg.tau * np.sign(v[th])
    if cfg.tau_g > 0 and groups is not None:
        for grp in groups.groups:
            nrm = np.linalg.norm(v[grp])
            if nrm > 0:
                g[grp] += cfg.tau_g * v[grp] / nrm
    return g


def r2_score(y_true, y_pred):
    """R^2 score in percent, one value per output column.

    Returns a float for 1-D inputs and an array for 2-D inputs.

    Raises
    ------
    ValueError
        If an output channel of ``y_true`` has zero variance.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    one_d = y_true.ndim == 1
    if one_d:
        y_true, y_pred = y_true[:, None], y_pred[:, None]
    ss_res = np.sum((y_true - y_pred) ** 2, axis=0)
    ss_tot = np.sum((y_true - y_true.mean(axis=0)) ** 2, axis=0)
    if np.any(ss_tot <= 0):
        bad = int(np.flatnonzero(ss_tot <= 0)[0])
        raise ValueError(f"R2 undefined: output {bad} has zero variance")
    r2 = 100.0 * (1.0 - ss_res / ss_tot)
    return float(r2[0]) if one_d else r2


def r2_average(y_true, y_pred):
    return float(np.mean(np.atleast_1d(r2_score(y_true, y_pred))))


# ---------------------------------------------------------------------------
# standard scaling

def standard_scale_fit(data, names=None):
    """Per-channel mean and population standard deviation of ``data`` (N, ch)."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    for i, s in enumerate(std):
        if not s > 0:
            name = names[i] if names is not None else f"channel {i}"
            raise ValueError(f"cannot scale {name}: zero standard deviation")
    return mean, std


def standard_scale_apply(data, mean, std):
    return (np.asarray(data, dtype=float) - mean) / std


def standard_scale_invert(data, mean, std):
    return np.asarray(data, dtype=float) * std + mean


@dataclass(frozen=True)
class Scaler:
    """Training-set statistics for inputs and outputs."""

    u_mean: np.ndarray
    u_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, dataset):
        U, Y = dataset.stacked()
        um, us = standard_scale_fit(U, [f"u{i + 1}" for i in range(U.shape[1])])
        ym, ys = standard_scale_fit(Y, [f"y{i + 1}" for i in range(Y.shape[1])])
        return cls(um, us, ym, ys)

    def apply(self, dataset):
        exps = [(standard_scale_apply(U, self.u_mean, self.u_std),
                 standard_scale_apply(Y, self.y_mean, self.y_std))
                for U, Y in dataset.experiments]
        return Dataset(exps, scaling=self.to_dict(), descriptor=dict(dataset.descriptor))

    def invert(self, dataset):
        exps = [(standard_scale_invert(U, self.u_mean, self.u_std),
                 standard_scale_invert(Y, self.y_mean, self.y_std))
                for U, Y in dataset.experiments]
        return Dataset(exps, descriptor=dict(dataset.descriptor))

    def to_dict(self):
        return {k: np.asarray(getattr(self, k)).tolist()
                for k in ("u_mean", "u_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, d):
        return cls(*(np.asarray(d[k], dtype=float) for k in ("u_mean", "u_std", "y_mean", "y_std")))
