"""Residual state-space model family, parameter packing and simulation.

The model is

    x_{k+1} = sat(A x_k + B u_k + f_x(x_k, u_k))
    y_k     = C x_k + D u_k + f_y(x_k, u_k)

where ``f_x`` and ``f_y`` are optional feedforward networks with a linear
output layer.  ``f_x`` always sees ``[x; u]``; ``f_y`` sees ``[x; u]`` when
feedthrough is enabled and ``x`` alone otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ACTIVATIONS = ("identity", "tanh", "relu", "swish")
SAT_MODES = ("none", "hard", "soft")


class ModelError(ValueError):
    """Raised on inconsistent model structure or parameter shapes."""


class NonFiniteError(FloatingPointError):
    """Raised when a simulated state or output is not finite.

    Attributes
    ----------
    step : int
        First time index at which a non-finite value appeared.
    experiment : int
        Index of the experiment being simulated.
    """

    def __init__(self, step, experiment=0):
        self.step = int(step)
        self.experiment = int(experiment)
        super().__init__(
            f"non-finite state or output at step {self.step} "
            f"(experiment {self.experiment})")


@dataclass(frozen=True)
class ModelSpec:
    """Structure of the model.

    Parameters
    ----------
    n_x, n_u, n_y : int
        State, input and output dimensions.
    fx_layers, fy_layers : tuple of int
        Hidden-layer widths of the state and output networks.  Empty means
        the network is absent.
    activation : str
        One of ``identity``, ``tanh``, ``relu``, ``swish``.
    feedthrough : bool
        Whether ``D`` (and the ``u`` input of ``f_y``) is present.
    structure_mask : dict, optional
        Maps a block name (``A``, ``B``, ``C``, ``D``, ``Wx1``, ``bx1``, ...)
        to a boolean array of the block's shape; ``True`` marks a free entry.
        Fixed entries keep the value of the base parameters (zero by default)
        and never enter the optimization vector.
    """

    n_x: int
    n_u: int
    n_y: int
    fx_layers: tuple = ()
    fy_layers: tuple = ()
    activation: str = "swish"
    feedthrough: bool = True
    structure_mask: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "fx_layers", tuple(int(w) for w in self.fx_layers))
        object.__setattr__(self, "fy_layers", tuple(int(w) for w in self.fy_layers))
        if self.n_x < 1 or self.n_y < 1 or self.n_u < 0:
            raise ModelError("need n_x >= 1, n_y >= 1 and n_u >= 0")
        if any(w < 1 for w in self.fx_layers + self.fy_layers):
            raise ModelError("hidden-layer widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation {self.activation!r}")
        if self.structure_mask is not None:
            shapes = dict(block_shapes(self))
            mask = {}
            for name, m in self.structure_mask.items():
                if name not in shapes:
                    raise ModelError(f"structure_mask names unknown block {name!r}")
                m = np.asarray(m, dtype=bool)
                if m.shape != shapes[name]:
                    raise ModelError(
                        f"structure_mask[{name!r}] has shape {m.shape}, "
                        f"expected {shapes[name]}")
                mask[name] = m
            object.__setattr__(self, "structure_mask", mask)

    @property
    def fy_uses_u(self):
        return self.feedthrough and self.n_u > 0

    @property
    def fx_sizes(self):
        if not self.fx_layers:
            return ()
        return (self.n_x + self.n_u,) + self.fx_layers + (self.n_x,)

    @property
    def fy_sizes(self):
        if not self.fy_layers:
            return ()
        n_in = self.n_x + (self.n_u if self.fy_uses_u else 0)
        return (n_in,) + self.fy_layers + (self.n_y,)

    @property
    def is_linear(self):
        return not self.fx_layers and not self.fy_layers

    def mask_for(self, name):
        if self.structure_mask is None:
            return None
        return self.structure_mask.get(name)

    def to_dict(self):
        d = {
            "n_x": self.n_x, "n_u": self.n_u, "n_y": self.n_y,
            "fx_layers": list(self.fx_layers), "fy_layers": list(self.fy_layers),
            "activation": self.activation, "feedthrough": self.feedthrough,
        }
        if self.structure_mask:
            d["structure_mask"] = {k: v.astype(int).tolist()
                                   for k, v in self.structure_mask.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "structure_mask" in d and d["structure_mask"] is not None:
            d["structure_mask"] = {k: np.asarray(v, dtype=bool)
                                   for k, v in d["structure_mask"].items()}
        return cls(**d)


@dataclass(frozen=True)
class SaturationConfig:
    """State saturation applied after every state update.

    ``x_sat`` may be a scalar (broadcast to all states) or a vector.
    """

    x_sat: object = 1e4
    mode: str = "hard"
    gamma: float = 10.0

    def __post_init__(self):
        if self.mode not in SAT_MODES:
            raise ModelError(f"unknown saturation mode {self.mode!r}")
        if self.mode != "none":
            xs = np.atleast_1d(np.asarray(self.x_sat, dtype=float))
            if not np.all(np.isfinite(xs)) or np.any(xs <= 0):
                raise ModelError("x_sat must be finite and > 0")
        if self.mode == "soft" and not self.gamma > 0:
            raise ModelError("soft saturation needs gamma > 0")

    def vector(self, n_x):
        xs = np.asarray(self.x_sat, dtype=float)
        if xs.ndim == 0:
            return np.full(n_x, float(xs))
        if xs.shape != (n_x,):
            raise ModelError(f"x_sat has shape {xs.shape}, expected ({n_x},)")
        return xs.copy()

    @property
    def mode_code(self):
        return SAT_MODES.index(self.mode)

    def to_dict(self):
        xs = np.asarray(self.x_sat, dtype=float)
        return {"x_sat": xs.tolist(), "mode": self.mode, "gamma": self.gamma}


@dataclass(frozen=True)
class ModelParams:
    """Numeric parameters of a model.

    ``theta_x`` and ``theta_y`` are tuples of ``(W, b)`` pairs, one per layer.
    """

    x0_list: tuple
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    theta_x: tuple = ()
    theta_y: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "x0_list",
                           tuple(np.asarray(x, dtype=float) for x in self.x0_list))
        for name in "ABCD":
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("theta_x", "theta_y"):
            layers = tuple((np.asarray(W, dtype=float), np.asarray(b, dtype=float))
                           for W, b in getattr(self, name))
            object.__setattr__(self, name, layers)

    @property
    def n_experiments(self):
        return len(self.x0_list)

    def block(self, name):
        if name in ("A", "B", "C", "D"):
            return getattr(self, name)
        net = self.theta_x if name[1] == "x" else self.theta_y
        layer = int(name[2:]) - 1
        return net[layer][0] if name[0] == "W" else net[layer][1]

    def replace(self, **kw):
        d = dict(x0_list=self.x0_list, A=self.A, B=self.B, C=self.C, D=self.D,
                 theta_x=self.theta_x, theta_y=self.theta_y)
        d.update(kw)
        return ModelParams(**d)

    def validate(self, spec):
        expected = dict(block_shapes(spec))
        expected.setdefault("D", (spec.n_y, spec.n_u))
        for name, shape in expected.items():
            got = self.block(name).shape if _has_block(self, name) else None
            if got != shape:
                raise ModelError(f"block {name!r} has shape {got}, expected {shape}")
        if len(self.theta_x) != max(len(spec.fx_sizes) - 1, 0):
            raise ModelError("theta_x has the wrong number of layers")
        if len(self.theta_y) != max(len(spec.fy_sizes) - 1, 0):
            raise ModelError("theta_y has the wrong number of layers")
        for j, x0 in enumerate(self.x0_list):
            if x0.shape != (spec.n_x,):
                raise ModelError(f"block 'x0[{j}]' has shape {x0.shape}, "
                                 f"expected ({spec.n_x},)")
        if not self.x0_list:
            raise ModelError("x0_list must hold at least one initial state")


def _has_block(params, name):
    try:
        params.block(name)
    except (IndexError, ValueError):
        return False
    return True


def _net_shapes(prefix, sizes):
    out = []
    for i in range(len(sizes) - 1):
        out.append((f"W{prefix}{i + 1}", (sizes[i + 1], sizes[i])))
        out.append((f"b{prefix}{i + 1}", (sizes[i + 1],)))
    return out


def block_shapes(spec):
    """Ordered ``(name, shape)`` list of all non-x0 blocks of ``spec``."""
    shapes = [("A", (spec.n_x, spec.n_x)), ("B", (spec.n_x, spec.n_u)),
              ("C", (spec.n_y, spec.n_x))]
    if spec.feedthrough:
        shapes.append(("D", (spec.n_y, spec.n_u)))
    shapes += _net_shapes("x", spec.fx_sizes)
    shapes += _net_shapes("y", spec.fy_sizes)
    return shapes


@dataclass(frozen=True)
class Block:
    name: str
    shape: tuple
    free: np.ndarray      # flat boolean, row-major
    offset: int           # position of first free entry in the flat vector

    @property
    def count(self):
        return int(self.free.sum())

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=int))

    def flat_indices(self):
        """Flat-vector index of each dense entry (row-major), -1 when fixed."""
        idx = np.full(self.size, -1, dtype=np.int64)
        idx[self.free] = self.offset + np.arange(self.count)
        return idx.reshape(self.shape)


class ParamLayout:
    """Ordering of free parameters in the flat optimization vector.

    Order: one x0 block per experiment (when learned), then ``A`` row-major,
    ``B``, ``C``, ``D``, the ``f_x`` layers (``W`` then ``b``) and the
    ``f_y`` layers.  Masked-fixed entries are omitted.
    """

    def __init__(self, spec, n_experiments=1, learn_x0=True):
        if n_experiments < 1:
            raise ModelError("need at least one experiment")
        self.spec = spec
        self.n_experiments = int(n_experiments)
        self.learn_x0 = bool(learn_x0)
        blocks = []
        offset = 0
        if learn_x0:
            for j in range(n_experiments):
                b = Block(f"x0[{j}]", (spec.n_x,), np.ones(spec.n_x, bool), offset)
                blocks.append(b)
                offset += b.count
        self.n_x0 = offset
        for name, shape in block_shapes(spec):
            m = spec.mask_for(name)
            free = (np.ones(int(np.prod(shape, dtype=int)), bool) if m is None
                    else np.asarray(m, bool).ravel().copy())
            b = Block(name, shape, free, offset)
            blocks.append(b)
            offset += b.count
        self.blocks = blocks
        self.by_name = {b.name: b for b in blocks}
        self.size = offset

    def __len__(self):
        return self.size

    @property
    def x0_indices(self):
        return np.arange(self.n_x0)

    @property
    def theta_indices(self):
        return np.arange(self.n_x0, self.size)

    def indices_of(self, prefixes):
        """Flat indices of all free entries in blocks whose names start with any prefix."""
        parts = [np.arange(b.offset, b.offset + b.count) for b in self.blocks
                 if b.name.startswith(tuple(prefixes))]
        return np.concatenate(parts) if parts else np.zeros(0, np.int64)

    def network_indices(self):
        return self.indices_of(("Wx", "bx", "Wy", "by"))


def pack_params(params, spec, learn_x0=True):
    """Flatten the free entries of ``params`` into one vector.

    Parameters
    ----------
    params : ModelParams
    spec : ModelSpec
    learn_x0 : bool
        Whether the per-experiment initial states are part of the vector.

    Returns
    -------
    numpy.ndarray
    """
    params.validate(spec)
    layout = ParamLayout(spec, params.n_experiments, learn_x0)
    v = np.empty(layout.size)
    for b in layout.blocks:
        if b.name.startswith("x0["):
            dense = params.x0_list[int(b.name[3:-1])]
        else:
            dense = params.block(b.name)
        v[b.offset:b.offset + b.count] = dense.ravel()[b.free]
    return v


def zero_params(spec, n_experiments=1):
    """All-zero parameters of the right shapes."""
    nets = {}
    for prefix, sizes in (("x", spec.fx_sizes), ("y", spec.fy_sizes)):
        nets[prefix] = tuple((np.zeros((sizes[i + 1], sizes[i])), np.zeros(sizes[i + 1]))
                             for i in range(len(sizes) - 1))
    return ModelParams(
        x0_list=tuple(np.zeros(spec.n_x) for _ in range(n_experiments)),
        A=np.zeros((spec.n_x, spec.n_x)), B=np.zeros((spec.n_x, spec.n_u)),
        C=np.zeros((spec.n_y, spec.n_x)), D=np.zeros((spec.n_y, spec.n_u)),
        theta_x=nets["x"], theta_y=nets["y"])


def unpack_params(v, spec, n_experiments=1, learn_x0=True, base=None):
    """Inverse of :func:`pack_params`.

    Fixed entries (masked blocks, and x0 when ``learn_x0`` is false) are
    taken from ``base``, or zero when ``base`` is None.
    """
    v = np.asarray(v, dtype=float)
    layout = ParamLayout(spec, n_experiments, learn_x0)
    if v.shape != (layout.size,):
        raise ModelError(f"flat vector has length {v.size}, expected {layout.size}")
    if base is None:
        base = zero_params(spec, n_experiments)
    else:
        base.validate(spec)
        if base.n_experiments != n_experiments:
            raise ModelError("base parameters have a different experiment count")
    dense = {}
    for b in layout.blocks:
        src = (base.x0_list[int(b.name[3:-1])] if b.name.startswith("x0[")
               else base.block(b.name))
        arr = np.array(src, dtype=float).ravel()
        arr[b.free] = v[b.offset:b.offset + b.count]
        dense[b.name] = arr.reshape(b.shape)
    x0 = tuple(dense.get(f"x0[{j}]", base.x0_list[j]) for j in range(n_experiments))

    def net(prefix, sizes):
        return tuple((dense[f"W{prefix}{i + 1}"], dense[f"b{prefix}{i + 1}"])
                     for i in range(len(sizes) - 1))

    return ModelParams(
        x0_list=x0, A=dense["A"], B=dense["B"], C=dense["C"],
        D=dense.get("D", np.zeros((spec.n_y, spec.n_u))),
        theta_x=net("x", spec.fx_sizes), theta_y=net("y", spec.fy_sizes))


def flatten_net(layers):
    """Concatenate ``[(W, b), ...]`` into one contiguous vector."""
    if not layers:
        return np.zeros(0)
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])


def unflatten_net(theta, sizes):
    out = []
    pos = 0
    for i in range(len(sizes) - 1):
        n_out, n_in = sizes[i + 1], sizes[i]
        W = theta[pos:pos + n_out * n_in].reshape(n_out, n_in)
        pos += n_out * n_in
        b = theta[pos:pos + n_out]
        pos += n_out
        out.append((W, b))
    return out


# ---------------------------------------------------------------------------
# elementwise functions

def activation_fn(name):
    if name == "identity":
        return lambda z: z, lambda z: np.ones_like(z)
    if name == "tanh":
        return np.tanh, lambda z: 1.0 - np.tanh(z) ** 2
    if name == "relu":
        return lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(float)
    if name == "swish":
        def swish(z):
            return z * _sigmoid(z)

        def dswish(z):
            s = _sigmoid(z)
            return s + z * s * (1.0 - s)
        return swish, dswish
    raise ModelError(f"unknown activation {name!r}")


def _sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(t):
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def hard_sat(x, x_sat):
    return np.minimum(np.maximum(x, -x_sat), x_sat)


def soft_sat(x, x_sat, gamma):
    """Smooth saturation to ``(-x_sat, x_sat)``.

    Evaluates ``x_sat + log((1 + exp(-g (x + x_sat))) / (1 + exp(-g (x - x_sat)))) / g``
    through softplus so that large ``|g x|`` does not overflow.
    """
    x = np.asarray(x, dtype=float)
    x_sat = np.asarray(x_sat, dtype=float)
    if gamma <= 0 or np.any(x_sat <= 0):
        raise ModelError("soft_sat needs gamma > 0 and x_sat > 0")
    # evaluated on |x| and sign-restored: exact antisymmetry, no cancellation for x << 0
    a = np.abs(x)
    return np.sign(x) * (x_sat + (_softplus(-gamma * (a + x_sat)) - _softplus(-gamma * (a - x_sat))) / gamma)


def soft_sat_grad(x, x_sat, gamma):
    return _sigmoid(-gamma * (x - x_sat)) - _sigmoid(-gamma * (x + x_sat))


def saturate(x, sat, x_sat):
    if sat.mode == "hard":
        return hard_sat(x, x_sat)
    if sat.mode == "soft":
        return soft_sat(x, x_sat, sat.gamma)
    return x


def saturate_grad(x, sat, x_sat):
    if sat.mode == "hard":
        return ((x >= -x_sat) & (x <= x_sat)).astype(float)
    if sat.mode == "soft":
        return soft_sat_grad(x, x_sat, sat.gamma)
    return np.ones_like(x)


# ---------------------------------------------------------------------------
# simulation

def simulate(params, spec, u_seq, sat=None, experiment=0):
    """Open-loop simulation from ``params.x0_list[experiment]``.

    Parameters
    ----------
    params : ModelParams
    spec : ModelSpec
    u_seq : array_like, shape (N, n_u)
    sat : SaturationConfig, optional
        Defaults to hard saturation at 1e4.
    experiment : int
        Which initial state to start from.

    Returns
    -------
    X : numpy.ndarray, shape (N, n_x)
        States x_0 ... x_{N-1}.
    Y : numpy.ndarray, shape (N, n_y)
        Outputs.

    Raises
    ------
    NonFiniteError
        If a state or output becomes non-finite.
    """
    from . import kernels

    sat = sat or SaturationConfig()
    params.validate(spec)
    U = _as_2d(u_seq, spec.n_u, "u_seq")
    X, Yh, bad = kernels.simulate(params, spec, params.x0_list[experiment], U, sat)
    if bad >= 0:
        raise NonFiniteError(bad, experiment)
    return X, Yh


def _as_2d(a, width, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and width == 1:
        a = a[:, None]
    if a.ndim == 1 and width == 0:
        a = np.zeros((a.shape[0], 0))
    if a.ndim != 2 or a.shape[1] != width:
        raise ModelError(f"{name} must have shape (N, {width}), got {a.shape}")
    return np.ascontiguousarray(a)


def mlp_forward(layers, inp, act):
    """Return output and the list of hidden pre-activations."""
    f, _ = activation_fn(act)
    h = inp
    zs = []
    for i, (W, b) in enumerate(layers):
        z = W @ h + b
        if i < len(layers) - 1:
            zs.append(z)
            h = f(z)
        else:
            h = z
    return h, zs


def mlp_jacobian(layers, inp, act):
    """Jacobian of an MLP output with respect to its input."""
    f, df = activation_fn(act)
    h = inp
    J = np.eye(inp.size)
    for i, (W, b) in enumerate(layers):
        z = W @ h + b
        J = W @ J
        if i < len(layers) - 1:
            J = df(z)[:, None] * J
            h = f(z)
    return J


def step(params, spec, x, u, sat=None):
    """One model step: returns ``(x_next, y)``."""
    sat = sat or SaturationConfig()
    xs = sat.vector(spec.n_x)
    xu = np.concatenate([x, u])
    pre = params.A @ x + params.B @ u
    if params.theta_x:
        pre = pre + mlp_forward(params.theta_x, xu, spec.activation)[0]
    y = params.C @ x + params.D @ u
    if params.theta_y:
        y = y + mlp_forward(params.theta_y, xu if spec.fy_uses_u else x, spec.activation)[0]
    return saturate(pre, sat, xs), y


def output_jacobian(params, spec, x, u):
    """Output ``y = g(x, u)`` and ``dg/dx``."""
    y = params.C @ x + params.D @ u
    Jg = params.C.copy()
    if params.theta_y:
        inp = np.concatenate([x, u]) if spec.fy_uses_u else x
        y = y + mlp_forward(params.theta_y, inp, spec.activation)[0]
        Jg = Jg + mlp_jacobian(params.theta_y, inp, spec.activation)[:, :spec.n_x]
    return y, Jg


def state_jacobian(params, spec, x, u, sat=None):
    """Saturated state update ``f(x, u)`` and ``df/dx``."""
    sat = sat or SaturationConfig()
    xs = sat.vector(spec.n_x)
    pre = params.A @ x + params.B @ u
    Jf = params.A.copy()
    if params.theta_x:
        xu = np.concatenate([x, u])
        pre = pre + mlp_forward(params.theta_x, xu, spec.activation)[0]
        Jf = Jf + mlp_jacobian(params.theta_x, xu, spec.activation)[:, :spec.n_x]
    return saturate(pre, sat, xs), saturate_grad(pre, sat, xs)[:, None] * Jf


def step_jacobians(params, spec, x, u, sat=None):
    """State update, output and their Jacobians with respect to ``x``.

    Returns
    -------
    x_next, dx_next_dx, y, dy_dx
    """
    x_next, Jf = state_jacobian(params, spec, x, u, sat)
    y, Jg = output_jacobian(params, spec, x, u)
    return x_next, Jf, y, Jg


def _mlp_rows(layers, H, act):
    f, _ = activation_fn(act)
    for i, (W, b) in enumerate(layers):
        H = H @ W.T + b
        if i < len(layers) - 1:
            H = f(H)
    return H


def step_batch(params, spec, X, U, sat=None):
    """:func:`step` applied row-wise to states ``X`` (B, n_x) and inputs ``U`` (B, n_u)."""
    sat = sat or SaturationConfig()
    xs = sat.vector(spec.n_x)
    pre = X @ params.A.T + U @ params.B.T
    XU = np.hstack([X, U])
    if params.theta_x:
        pre = pre + _mlp_rows(params.theta_x, XU, spec.activation)
    Y = X @ params.C.T + U @ params.D.T
    if params.theta_y:
        Y = Y + _mlp_rows(params.theta_y, XU if spec.fy_uses_u else X, spec.activation)
    return saturate(pre, sat, xs), Y


def random_params(spec, rng, n_experiments=1, A_scale=0.5, std=0.1, base=None):
    """Random initial parameters: ``A = A_scale * I``, other entries ``N(0, std^2)``.

    Initial states are zero.  Masked-fixed entries keep ``base`` values (zero
    when ``base`` is None).
    """
    layout = ParamLayout(spec, n_experiments, learn_x0=True)
    v = np.zeros(layout.size)
    for b in layout.blocks:
        if b.name.startswith("x0["):
            continue
        if b.name == "A":
            dense = A_scale * np.eye(spec.n_x)
            v[b.offset:b.offset + b.count] = dense.ravel()[b.free]
        else:
            v[b.offset:b.offset + b.count] = std * rng.standard_normal(b.count)
    return unpack_params(v, spec, n_experiments, True, base)


def spectral_radius(A):
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


