"""Variable splitting of l1 and group-Lasso penalties into a smooth,
bound-constrained problem.

Writing ``x = y - z`` with ``y, z >= 0`` turns ``tau ||x||_1`` into the linear
term ``tau * sum(y + z)`` and ``tau_g ||x_G||_2`` into ``tau_g ||(y + z)_G||_2``.
At a minimizer ``y_i z_i = 0``, so the split problem and the original one have
the same solutions.  The resulting problem is smooth on the box (for the group
terms, once ``y, z`` are kept away from zero by a tiny floor) and can be
handed to a bound-constrained quasi-Newton method.

Only the entries that appear in a nonsmooth term are split; the others,
including the initial states, stay as they are.

Layout of the doubled vector ``w``::

    [ unsplit entries of x | y (kept parts) | z (kept parts) ]
"""
from dataclasses import dataclass

import numpy as np

GROUP_FLOOR = 1e-16


class SplitError(ValueError):
    """Inconsistent split configuration (bad bounds or indices)."""


def recover(y, z):
    """``x = y - z``."""
    return np.asarray(y, dtype=float) - np.asarray(z, dtype=float)


def complementarity(y, z):
    """Largest ``min(y_i, z_i)``; zero at an exact split solution."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if y.size == 0:
        return 0.0
    return float(np.max(np.minimum(y, z)))


@dataclass(frozen=True)
class BoxSplit:
    """Bounds of the positive and negative parts of split entries.

    ``keep_y[i]`` / ``keep_z[i]`` say whether the part exists at all; a
    removed part is identically zero.
    """

    keep_y: np.ndarray
    keep_z: np.ndarray
    y_lower: np.ndarray
    y_upper: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray


def map_box_bounds(x_min, x_max, split_idx=None, floor=0.0):
    """Translate ``x_min <= x <= x_max`` into bounds on ``y`` and ``z``.

    Parameters
    ----------
    x_min, x_max : array_like
        Bounds on the split entries (``-inf`` / ``inf`` allowed).  When
        ``split_idx`` is given they are indexed by it, otherwise they already
        refer to the split entries.
    split_idx : array_like of int, optional
    floor : float
        Lower bound used instead of zero for a kept part (group-Lasso).

    Returns
    -------
    BoxSplit

    Notes
    -----
    * ``x_max > 0``: ``y`` in ``[0, x_max]``; ``x_max <= 0``: ``y`` removed and
      ``z >= -x_max``.
    * ``x_min < 0``: ``z`` in ``[0, -x_min]``; ``x_min >= 0``: ``z`` removed and
      ``y >= x_min``.  A sign constraint therefore needs no splitting.
    """
    x_min = np.asarray(x_min, dtype=float)
    x_max = np.asarray(x_max, dtype=float)
    if split_idx is not None:
        idx = np.asarray(split_idx, dtype=np.int64)
        x_min = np.broadcast_to(x_min, idx.shape) if x_min.ndim == 0 else x_min[idx]
        x_max = np.broadcast_to(x_max, idx.shape) if x_max.ndim == 0 else x_max[idx]
    x_min, x_max = np.broadcast_arrays(x_min, x_max)
    if np.any(np.isnan(x_min)) or np.any(np.isnan(x_max)):
        raise SplitError("bounds must not be NaN")
    if np.any(x_min > x_max):
        i = int(np.flatnonzero(x_min > x_max)[0])
        raise SplitError(f"contradictory bounds at entry {i}: {x_min[i]} > {x_max[i]}")
    keep_y = x_max > 0
    keep_z = x_min < 0
    y_lo = np.where(keep_z, floor, np.maximum(x_min, floor))
    y_hi = np.where(keep_y, x_max, 0.0)
    z_lo = np.where(keep_y, floor, np.maximum(-x_max, floor))
    z_hi = np.where(keep_z, -x_min, 0.0)
    return BoxSplit(keep_y, keep_z, np.where(keep_y, y_lo, 0.0), y_hi,
                    np.where(keep_z, z_lo, 0.0), z_hi)


class SplitProblem:
    """Smooth bound-constrained problem in ``w`` equivalent to
    ``min_x f(x) + r(x)``.

    Parameters
    ----------
    f_grad : callable
        ``x -> (f, grad)`` for the smooth part.
    n : int
        Dimension of ``x``.
    split_idx : array_like of int
        Entries of ``x`` that are split.
    l1 : array_like
        Per-entry weight of ``sum(y + z)`` on the split entries.
    ridge : array_like
        Per-entry weight ``rho`` of ``rho/2 * x_i^2`` for all ``n`` entries; on
        split entries it acts as ``rho/2 (y_i^2 + z_i^2)``.
    groups : list of index arrays, optional
        Groups of ``x`` entries penalised by ``tau_g ||.||_2`` on their
        magnitudes (``y + z`` on split entries, ``x`` itself elsewhere).
    tau_g : float
    x_min, x_max : array_like, optional
        Box on ``x``.  Defaults to no constraint.
    floor : float
        Lower bound of kept split parts.
    """

    def __init__(self, f_grad, n, split_idx, l1, ridge, groups=None, tau_g=0.0,
                 x_min=None, x_max=None, floor=0.0):
        self.f_grad = f_grad
        self.dim_original = int(n)
        S = np.asarray(split_idx, dtype=np.int64).ravel()
        if S.size and (S.min() < 0 or S.max() >= n or np.unique(S).size != S.size):
            raise SplitError("split indices must be unique and inside [0, n)")
        self.split_idx = S
        self.unsplit_idx = np.setdiff1d(np.arange(n), S)
        self.l1 = np.broadcast_to(np.asarray(l1, dtype=float), S.shape).copy()
        self.ridge = np.broadcast_to(np.asarray(ridge, dtype=float), (n,)).copy()
        self.tau_g = float(tau_g)
        self.groups = [np.asarray(g, dtype=np.int64) for g in (groups or [])]
        self.floor = float(floor)
        x_min = np.full(n, -np.inf) if x_min is None else np.broadcast_to(np.asarray(x_min, float), (n,))
        x_max = np.full(n, np.inf) if x_max is None else np.broadcast_to(np.asarray(x_max, float), (n,))
        box = map_box_bounds(x_min[S], x_max[S], floor=self.floor)
        self.box = box
        self._y_pos = S[box.keep_y]
        self._z_pos = S[box.keep_z]
        nu = self.unsplit_idx.size
        ny, nz = self._y_pos.size, self._z_pos.size
        self._sl_u = slice(0, nu)
        self._sl_y = slice(nu, nu + ny)
        self._sl_z = slice(nu + ny, nu + ny + nz)
        self.dim = nu + ny + nz
        if np.any(x_min[self.unsplit_idx] > x_max[self.unsplit_idx]):
            raise SplitError("contradictory bounds on unsplit entries")
        self.lower = np.concatenate([x_min[self.unsplit_idx], box.y_lower[box.keep_y],
                                     box.z_lower[box.keep_z]])
        self.upper = np.concatenate([x_max[self.unsplit_idx], box.y_upper[box.keep_y],
                                     box.z_upper[box.keep_z]])
        # per-part weights, aligned with the y / z blocks
        pos = {int(i): k for k, i in enumerate(S)}
        self._l1_y = self.l1[[pos[int(i)] for i in self._y_pos]] if ny else np.zeros(0)
        self._l1_z = self.l1[[pos[int(i)] for i in self._z_pos]] if nz else np.zeros(0)

    # -- maps between x and w ------------------------------------------------
    def parts(self, w):
        """Full-length ``(y, z)`` of the split entries (zeros where removed)
        and the unsplit entries."""
        w = np.asarray(w, dtype=float)
        n = self.dim_original
        y = np.zeros(n)
        z = np.zeros(n)
        y[self._y_pos] = w[self._sl_y]
        z[self._z_pos] = w[self._sl_z]
        return y[self.split_idx], z[self.split_idx], w[self._sl_u]

    def recover(self, w):
        """``x`` with ``x_S = y - z`` and the unsplit entries passed through."""
        w = np.asarray(w, dtype=float)
        x = np.zeros(self.dim_original)
        x[self.unsplit_idx] = w[self._sl_u]
        x[self._y_pos] += w[self._sl_y]
        x[self._z_pos] -= w[self._sl_z]
        return x

    def magnitude(self, w):
        """``y + z`` on split entries, ``x`` on unsplit ones."""
        w = np.asarray(w, dtype=float)
        a = np.zeros(self.dim_original)
        a[self.unsplit_idx] = w[self._sl_u]
        a[self._y_pos] += w[self._sl_y]
        a[self._z_pos] += w[self._sl_z]
        return a

    def lift(self, x):
        """Feasible ``w`` with ``y = max(x, 0)`` and ``z = max(-x, 0)``,
        clipped into the bounds."""
        x = np.asarray(x, dtype=float)
        w = np.concatenate([x[self.unsplit_idx], np.maximum(x[self._y_pos], 0.0),
                            np.maximum(-x[self._z_pos], 0.0)])
        return np.minimum(np.maximum(w, self.lower), self.upper)

    def complementarity(self, w):
        y, z, _ = self.parts(w)
        both = self.box.keep_y & self.box.keep_z
        return complementarity(y[both], z[both])

    # -- objective -----------------------------------------------------------
    def penalty(self, w):
        """Value of every term except ``f``."""
        return self._penalty(np.asarray(w, dtype=float), need_grad=False)[0]

    def _penalty(self, w, need_grad=True):
        wu, wy, wz = w[self._sl_u], w[self._sl_y], w[self._sl_z]
        ru = self.ridge[self.unsplit_idx]
        ry = self.ridge[self._y_pos]
        rz = self.ridge[self._z_pos]
        val = 0.5 * (float(ru @ (wu * wu)) + float(ry @ (wy * wy)) + float(rz @ (wz * wz)))
        val += float(self._l1_y @ wy) + float(self._l1_z @ wz)
        ga = None
        if self.tau_g > 0 and self.groups:
            a = self.magnitude(w)
            ga = np.zeros(self.dim_original)
            for grp in self.groups:
                nrm = float(np.linalg.norm(a[grp]))
                val += self.tau_g * nrm
                if nrm > 0:
                    ga[grp] += self.tau_g * a[grp] / nrm
        if not need_grad:
            return val, None
        g = np.concatenate([ru * wu, ry * wy + self._l1_y, rz * wz + self._l1_z])
        if ga is not None:
            g[self._sl_u] += ga[self.unsplit_idx]
            g[self._sl_y] += ga[self._y_pos]
            g[self._sl_z] += ga[self._z_pos]
        return val, g

    def __call__(self, w):
        """``w -> (g(w), grad g(w))``."""
        w = np.asarray(w, dtype=float)
        x = self.recover(w)
        f, gf = self.f_grad(x)
        pv, pg = self._penalty(w)
        grad = pg
        grad[self._sl_u] += gf[self.unsplit_idx]
        grad[self._sl_y] += gf[self._y_pos]
        grad[self._sl_z] -= gf[self._z_pos]
        return float(f) + pv, grad


def _ridge_vector(n, cfg, x0_indices):
    ridge = np.full(n, float(cfg.rho_theta))
    ridge[np.asarray(x0_indices, dtype=np.int64)] = cfg.rho_x
    return ridge


def _check_split_idx(split_idx, x0_indices):
    S = np.asarray(split_idx, dtype=np.int64).ravel()
    if np.intersect1d(S, np.asarray(x0_indices, dtype=np.int64)).size:
        raise SplitError("initial-state entries are never split")
    return S


def build_elastic_net_split(f_grad, cfg, split_idx, n=None, x0_indices=(),
                            x_min=None, x_max=None):
    """Split problem for ``f(x) + rho/2 ||x||^2 + tau ||x_S||_1``.

    ``g(y, z) = f(y - z) + tau sum(y + z) + rho_theta/2 (||y||^2 + ||z||^2)``
    on the split entries, with ``y, z >= 0``; unsplit entries keep their
    ridge term (``rho_x`` on ``x0_indices``, ``rho_theta`` elsewhere).

    Parameters
    ----------
    f_grad : callable
        ``x -> (f, grad)``.
    cfg : RegularizationConfig
    split_idx : array_like of int
    n : int, optional
        Dimension of ``x``; defaults to ``max(split_idx) + 1``.
    """
    S = _check_split_idx(split_idx, x0_indices)
    n = int(S.max() + 1 if n is None else n)
    ridge = _ridge_vector(n, cfg, x0_indices)
    return SplitProblem(f_grad, n, S, cfg.tau, ridge, x_min=x_min, x_max=x_max)


def build_group_lasso_split(f_grad, cfg, groups, split_idx, n=None, x0_indices=(),
                            x_min=None, x_max=None, floor=GROUP_FLOOR):
    """Split problem for ``f(x) + r(x) + tau_g sum_i ||x_{G_i}||_2``.

    ``g(y, z) = f(y - z) + (tau + epsilon) sum(y + z)
    + tau_g sum_i ||(y + z)_{G_i}||_2`` plus the ridge terms, with
    ``y, z >= floor``.  Group entries that are not split (initial states)
    enter the group norm with their own value.

    Parameters
    ----------
    groups : GroupIndexSet or list of index arrays
    """
    if not cfg.tau_g > 0:
        raise SplitError("group-Lasso split needs tau_g > 0")
    if not cfg.epsilon > 0:
        raise SplitError("group-Lasso split needs epsilon > 0")
    S = _check_split_idx(split_idx, x0_indices)
    glist = list(getattr(groups, "groups", groups))
    if n is None:
        n = int(max([S.max() + 1 if S.size else 0] + [int(np.max(g)) + 1 for g in glist if len(g)]))
    ridge = _ridge_vector(n, cfg, x0_indices)
    return SplitProblem(f_grad, n, S, cfg.tau + cfg.epsilon, ridge, glist, cfg.tau_g,
                        x_min=x_min, x_max=x_max, floor=floor)
