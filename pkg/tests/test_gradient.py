import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from sparsysid.datasets import Dataset
from sparsysid.gradient import SimulationLoss, loss_and_grad
from sparsysid.model import (ModelSpec, NonFiniteError, ParamLayout, SaturationConfig,
                             pack_params, random_params, simulate, unpack_params)

SCALAR = ModelSpec(1, 1, 1, feedthrough=False)
SCALAR_DATA = Dataset([([1.0, 1.0], [0.0, 1.0])])


def test_scalar_at_exact_fit():
    # flat order: x0, A, B, C
    res = loss_and_grad([0.0, 0.5, 1.0, 1.0], SCALAR, SCALAR_DATA)
    assert res.value == 0.0
    assert_allclose(res.grad, 0.0, atol=0)


def test_scalar_symbolic_reference():
    # two samples, so mean squared error equals half the sum of squares;
    # reference values from symbolic differentiation
    res = loss_and_grad([0.4, 0.3, 0.7, 1.2], SCALAR, SCALAR_DATA)
    assert_allclose(res.value, 0.115328, rtol=1e-13)
    assert_allclose(res.grad, [0.57024, -0.00768, -0.0192, 0.17888], rtol=1e-12)


def _fd(fun, v, h=1e-6):
    g = np.zeros_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        g[i] = (fun(v + e) - fun(v - e)) / (2 * h)
    return g


SPECS = [
    ModelSpec(2, 2, 1, feedthrough=True),
    ModelSpec(2, 1, 2, (3,), (), "tanh"),
    ModelSpec(2, 2, 2, (3,), (4,), "swish", feedthrough=True),
    ModelSpec(2, 1, 1, (3, 2), (2,), "tanh"),
]


@pytest.mark.parametrize("spec", SPECS)
@pytest.mark.parametrize("sat", [SaturationConfig(mode="none"),
                                 SaturationConfig(x_sat=0.7, mode="soft", gamma=5.0)])
def test_gradient_matches_finite_differences(spec, sat):
    rng = np.random.default_rng(21)
    data = Dataset([(rng.standard_normal((25, spec.n_u)), rng.standard_normal((25, spec.n_y))),
                    (rng.standard_normal((12, spec.n_u)), rng.standard_normal((12, spec.n_y)))])
    loss = SimulationLoss(spec, data, sat)
    v = rng.standard_normal(loss.layout.size) * 0.3
    _, g = loss(v)
    assert_allclose(g, _fd(loss.value, v), rtol=1e-6, atol=1e-8)


def test_hard_saturation_gradient_away_from_kinks():
    spec = ModelSpec(2, 1, 1, (3,), (), "tanh")
    rng = np.random.default_rng(3)
    data = Dataset([(rng.standard_normal((30, 1)), rng.standard_normal((30, 1)))])
    sat = SaturationConfig(x_sat=0.4)
    loss = SimulationLoss(spec, data, sat)
    v = rng.standard_normal(loss.layout.size) * 0.5
    _, g = loss(v)
    assert_allclose(g, _fd(loss.value, v, 1e-8), rtol=1e-5, atol=1e-7)


def test_linear_output_matrix_gradient_closed_form():
    rng = np.random.default_rng(5)
    spec = ModelSpec(3, 2, 2, feedthrough=True)
    data = Dataset([(rng.standard_normal((40, 2)), rng.standard_normal((40, 2)))])
    p = random_params(spec, rng, std=0.3)
    X, Yh = simulate(p, spec, data.experiments[0][0], SaturationConfig(mode="none"))
    E = Yh - data.experiments[0][1]
    expected_dC = 2.0 * E.T @ X / 40
    loss = SimulationLoss(spec, data, SaturationConfig(mode="none"))
    _, g = loss(pack_params(p, spec))
    blk = loss.layout.by_name["C"]
    assert_allclose(g[blk.offset:blk.offset + blk.count], expected_dC.ravel(), rtol=1e-12)


@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 1000))
def test_loss_weights_experiments_by_length(n1, n2, seed):
    rng = np.random.default_rng(seed)
    spec = ModelSpec(2, 1, 1)
    e1 = (rng.standard_normal((n1, 1)), rng.standard_normal((n1, 1)))
    e2 = (rng.standard_normal((n2, 1)), rng.standard_normal((n2, 1)))
    p = random_params(spec, rng, n_experiments=2)
    v = pack_params(p, spec)
    both = loss_and_grad(v, spec, Dataset([e1, e2])).value
    lay = ParamLayout(spec, 2)
    # same model with each experiment on its own
    singles = []
    for j, e in enumerate((e1, e2)):
        q = type(p)((p.x0_list[j],), p.A, p.B, p.C, p.D)
        singles.append(loss_and_grad(pack_params(q, spec), spec, Dataset([e])).value)
    assert lay.n_x0 == 2 * spec.n_x
    assert_allclose(both, (n1 * singles[0] + n2 * singles[1]) / (n1 + n2), rtol=1e-12)


def test_fixed_entries_come_from_base():
    spec = ModelSpec(2, 1, 1, structure_mask={"A": np.eye(2, dtype=bool)})
    base = unpack_params(np.zeros(ParamLayout(spec).size), spec)
    base = type(base)(base.x0_list, np.array([[0.0, 0.3], [0.2, 0.0]]), base.B, base.C, base.D)
    loss = SimulationLoss(spec, Dataset([(np.ones((5, 1)), np.ones((5, 1)))]), base=base)
    p = loss.params(np.arange(loss.layout.size, dtype=float) * 0.1)
    assert p.A[0, 1] == 0.3 and p.A[1, 0] == 0.2


def test_nonfinite_loss_raises():
    spec = ModelSpec(1, 1, 1, feedthrough=False)
    data = Dataset([(np.ones((20, 1)), np.ones((20, 1)))])
    with pytest.raises(NonFiniteError):
        loss_and_grad([1.0, 1e300, 1e300, 1.0], spec, data, SaturationConfig(mode="none"))


@pytest.mark.parametrize("seed", range(20))
def test_random_rnn_gradient_relative_error(seed):
    rng = np.random.default_rng(1000 + seed)
    if seed % 2:
        spec = ModelSpec(3, 2, 2, (8,), (6,), "swish", feedthrough=True)
    else:
        spec = ModelSpec(3, 2, 2, feedthrough=True)
    data = Dataset([(rng.standard_normal((20, 2)), rng.standard_normal((20, 2)))])
    sat = SaturationConfig()
    loss = SimulationLoss(spec, data, sat)
    v = 0.3 * rng.standard_normal(loss.layout.size)
    X, _ = simulate(loss.params(v), spec, data.experiments[0][0], sat)
    assert np.all(np.abs(np.abs(X) - 1e4) > 1e-3)
    _, g = loss(v)
    fd = _fd(loss.value, v)
    # central differences at h=1e-6 carry roundoff of about eps*|f|/h, so
    # relative error is measured against max(|fd|, 1e-3)
    rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)
    assert rel.max() < 1e-5
