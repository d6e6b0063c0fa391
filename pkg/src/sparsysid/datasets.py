"""Input/output datasets: containers, synthetic generators and CSV I/O."""
import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .model import spectral_radius


class DataError(ValueError):
    """Malformed or inconsistent data."""


@dataclass
class Dataset:
    """One or more input/output experiments.

    Attributes
    ----------
    experiments : list of (U, Y)
        ``U`` has shape (N_j, n_u) and ``Y`` shape (N_j, n_y).
    scaling : dict, optional
        Per-channel statistics used to scale the data, if any.
    descriptor : dict
        Provenance (generator name, seed, ...).
    """

    experiments: list
    scaling: dict = None
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self):
        exps = []
        for U, Y in self.experiments:
            U = np.asarray(U, dtype=float)
            Y = np.asarray(Y, dtype=float)
            if U.ndim == 1:
                U = U[:, None]
            if Y.ndim == 1:
                Y = Y[:, None]
            if U.shape[0] != Y.shape[0]:
                raise DataError(f"U has {U.shape[0]} rows but Y has {Y.shape[0]}")
            exps.append((np.ascontiguousarray(U), np.ascontiguousarray(Y)))
        if not exps:
            raise DataError("dataset needs at least one experiment")
        if len({(U.shape[1], Y.shape[1]) for U, Y in exps}) != 1:
            raise DataError("channel counts differ across experiments")
        self.experiments = exps

    @property
    def n_u(self):
        return self.experiments[0][0].shape[1]

    @property
    def n_y(self):
        return self.experiments[0][1].shape[1]

    @property
    def n_experiments(self):
        return len(self.experiments)

    @property
    def lengths(self):
        return [U.shape[0] for U, _ in self.experiments]

    def stacked(self):
        U = np.vstack([U for U, _ in self.experiments])
        Y = np.vstack([Y for _, Y in self.experiments])
        return U, Y

    def boundaries(self):
        return [0] + [int(b) for b in np.cumsum(self.lengths)]

    def split(self, n_train):
        """Split a single-experiment dataset into head and tail datasets."""
        if self.n_experiments != 1:
            raise DataError("split expects a single experiment")
        U, Y = self.experiments[0]
        return (Dataset([(U[:n_train], Y[:n_train])], self.scaling, dict(self.descriptor)),
                Dataset([(U[n_train:], Y[n_train:])], self.scaling, dict(self.descriptor)))


@dataclass(frozen=True)
class TrueSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    x0: np.ndarray


def _simulate_lti(sys, U, rng, noise_std):
    N = U.shape[0]
    n_x = sys.A.shape[0]
    n_y = sys.C.shape[0]
    X = np.zeros((N, n_x))
    Y = np.zeros((N, n_y))
    x = sys.x0.copy()
    for k in range(N):
        X[k] = x
        Y[k] = sys.C @ x + sys.D @ U[k]
        x = sys.A @ x + sys.B @ U[k]
        if noise_std > 0:
            Y[k] += noise_std * rng.standard_normal(n_y)
            x = x + noise_std * rng.standard_normal(n_x)
    return X, Y


def order_reduction_system():
    A = np.array([
        [0.96, 0.26, 0.04, 0, 0, 0],
        [-0.26, 0.70, 0.26, 0, 0, 0],
        [0, 0, 0.93, 0.32, 0.07, 0],
        [0, 0, -0.32, 0.61, 0.32, 0],
        [0, 0, 0, 0, 0.90, 0.38],
        [0, 0, 0, 0, -0.38, 0.52]])
    B = np.array([
        [0, 0],
        [0, 0],
        [0.07, 0],
        [0.32, 0],
        [0, 0.10],
        [0, 0.38]])
    C = np.zeros((2, 6))
    C[0, 0] = 1.0
    C[1, 2] = 1.0
    return TrueSystem(A, B, C, np.zeros((2, 2)), np.zeros(6))


def random_stable_system(rng, n_x, n_u, n_y, radius=0.9, feedthrough=False):
    """Gaussian ``A`` rescaled to spectral radius ``radius``; ``B``, ``C`` (and ``D``) N(0, 1)."""
    A = rng.standard_normal((n_x, n_x))
    A *= radius / spectral_radius(A)
    B = rng.standard_normal((n_x, n_u))
    C = rng.standard_normal((n_y, n_x))
    D = rng.standard_normal((n_y, n_u)) if feedthrough else np.zeros((n_y, n_u))
    return TrueSystem(A, B, C, D, np.zeros(n_x))


def _descriptor(name, seed, N, noise_std, **extra):
    d = {"generator": name, "seed": seed, "N": N, "noise_std": noise_std,
         "excitation": "iid standard Gaussian", "x0": "zero"}
    d.update(extra)
    return d


def gen_order_reduction(seed=0, N=2000, noise_std=0.01):
    """Data from the 6-state, 2-input, 2-output system with outputs ``(x1, x3)``.

    Returns
    -------
    Dataset, TrueSystem
    """
    rng = np.random.default_rng(seed)
    sys = order_reduction_system()
    assert spectral_radius(sys.A) < 1
    U = rng.standard_normal((N, 2))
    _, Y = _simulate_lti(sys, U, rng, noise_std)
    return Dataset([(U, Y)], descriptor=_descriptor("order_reduction", seed, N, noise_std)), sys


def gen_input_selection(seed=0, N=10000, noise_std=0.01):
    """Random stable 3-state, 10-input, 1-output system; inputs 6..10 scaled by 1e-3."""
    rng = np.random.default_rng(seed)
    sys = random_stable_system(rng, 3, 10, 1)
    B = sys.B.copy()
    B[:, 5:] /= 1000.0
    sys = TrueSystem(sys.A, B, sys.C, sys.D, sys.x0)
    assert spectral_radius(sys.A) < 1
    U = rng.standard_normal((N, 10))
    _, Y = _simulate_lti(sys, U, rng, noise_std)
    return Dataset([(U, Y)], descriptor=_descriptor("input_selection", seed, N, noise_std)), sys


def gen_causal(seed=0, N=1000, noise_std=0.05):
    """Random stable strictly proper system (10 states, 5 inputs, 5 outputs).

    The returned dataset uses the stacked signal ``[y; u]`` both as input and
    as output, so a learner cannot tell from the layout which channels are
    the true outputs (the first five).
    """
    rng = np.random.default_rng(seed)
    sys = random_stable_system(rng, 10, 5, 5)
    assert spectral_radius(sys.A) < 1
    U = rng.standard_normal((N, 5))
    _, Y = _simulate_lti(sys, U, rng, noise_std)
    S = np.hstack([Y, U])
    desc = _descriptor("causal", seed, N, noise_std, layout="[y1..y5, u1..u5]")
    return Dataset([(S, S.copy())], descriptor=desc), sys


GENERATORS = {
    "order_reduction": gen_order_reduction,
    "input_selection": gen_input_selection,
    "causal": gen_causal,
}


# ---------------------------------------------------------------------------
# CSV

def load_csv(path, n_u, n_y, experiment_boundaries=None):
    """Read a CSV file with a header row and columns ``u1..u_nu, y1..y_ny``.

    Parameters
    ----------
    path : str
    n_u, n_y : int
    experiment_boundaries : list of int, optional
        Row offsets ``[0, N_1, N_1 + N_2, ..., N]`` splitting the rows into
        experiments.  Defaults to a single experiment.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) != n_u + n_y:
            raise DataError(f"{path}: line 1: header has {len(header)} columns, "
                            f"expected {n_u + n_y}")
        try:
            [float(h) for h in header]
        except ValueError:
            pass
        else:
            raise DataError(f"{path}: line 1: header row required")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != n_u + n_y:
                raise DataError(f"{path}: line {line}: expected {n_u + n_y} "
                                f"columns, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataError(f"{path}: line {line}: non-numeric value") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"{path}: line {line}: non-finite value")
            rows.append(vals)
    data = np.array(rows, dtype=float).reshape(len(rows), n_u + n_y)
    n = data.shape[0]
    bounds = [0, n] if experiment_boundaries is None else [int(b) for b in experiment_boundaries]
    if bounds[0] != 0 or bounds[-1] != n or any(b >= a for a, b in zip(bounds[1:], bounds)):
        raise DataError(f"{path}: experiment boundaries {bounds} do not partition {n} rows")
    exps = [(data[a:b, :n_u], data[a:b, n_u:]) for a, b in zip(bounds, bounds[1:])]
    desc = {"source": os.path.basename(path)}
    meta = _sidecar_path(path)
    if os.path.exists(meta):
        with open(meta) as fh:
            desc = json.load(fh).get("descriptor", desc)
    return Dataset(exps, descriptor=desc)


def _sidecar_path(path):
    return path + ".meta.json"


def read_sidecar(path):
    meta = _sidecar_path(path)
    if not os.path.exists(meta):
        return None
    with open(meta) as fh:
        return json.load(fh)


def export_csv(dataset, path, sidecar=True):
    """Write ``dataset`` as CSV (full-precision floats) plus a JSON sidecar."""
    U, Y = dataset.stacked()
    header = [f"u{i + 1}" for i in range(U.shape[1])] + [f"y{i + 1}" for i in range(Y.shape[1])]
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.hstack([U, Y]):
            w.writerow([repr(float(v)) for v in row])
    os.replace(tmp, path)
    if sidecar:
        meta = {"descriptor": dataset.descriptor, "n_u": U.shape[1], "n_y": Y.shape[1],
                "experiment_boundaries": dataset.boundaries()}
        tmp = _sidecar_path(path) + ".tmp"
        with open(tmp, "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, _sidecar_path(path))
