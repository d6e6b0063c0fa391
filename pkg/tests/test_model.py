import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from sparsysid.model import (ModelError, ModelParams, ModelSpec, NonFiniteError,
                             ParamLayout, SaturationConfig, hard_sat, pack_params,
                             random_params, simulate, soft_sat, soft_sat_grad, step,
                             step_batch, step_jacobians, unpack_params)


def scalar_params(A=0.5, B=1.0, C=1.0, x0=0.0):
    return ModelParams((np.array([x0]),), [[A]], [[B]], [[C]], [[0.0]])


def test_pack_scalar_with_masked_D():
    spec = ModelSpec(1, 1, 1, feedthrough=True, structure_mask={"D": [[False]]})
    v = pack_params(scalar_params(), spec)
    assert_array_equal(v, [0.0, 0.5, 1.0, 1.0])


def test_pack_reports_offending_block():
    spec = ModelSpec(2, 1, 1)
    p = ModelParams((np.zeros(2),), np.eye(2), np.zeros((2, 1)), np.zeros((1, 3)),
                    np.zeros((1, 1)))
    with pytest.raises(ModelError, match="'C'"):
        pack_params(p, spec)


def test_roundtrip_random_params(rng):
    spec = ModelSpec(3, 2, 2)
    p = random_params(spec, rng)
    q = unpack_params(pack_params(p, spec), spec)
    for name in "ABCD":
        assert_array_equal(getattr(p, name), getattr(q, name))
    assert_array_equal(p.x0_list[0], q.x0_list[0])


def test_rnn_parameter_counts():
    # robot-arm structure: 12 states, 6 inputs, 6 outputs, one hidden layer each
    spec = ModelSpec(12, 6, 6, (36,), (24,), feedthrough=False)
    layout = ParamLayout(spec)
    assert layout.network_indices().size == 1590
    # with A, B, C frozen only the networks and x0 are optimized
    fixed = {"A": np.zeros((12, 12), bool), "B": np.zeros((12, 6), bool),
             "C": np.zeros((6, 12), bool)}
    spec_fixed = ModelSpec(12, 6, 6, (36,), (24,), feedthrough=False, structure_mask=fixed)
    lay = ParamLayout(spec_fixed)
    assert lay.size == 1602
    # splitting the 1590 network weights doubles them, x0 stays
    assert 2 * lay.network_indices().size + lay.n_x0 == 3192


@st.composite
def specs(draw):
    n_x = draw(st.integers(1, 4))
    n_u = draw(st.integers(0, 3))
    n_y = draw(st.integers(1, 3))
    fx = tuple(draw(st.lists(st.integers(1, 4), max_size=2)))
    fy = tuple(draw(st.lists(st.integers(1, 4), max_size=2)))
    return ModelSpec(n_x, n_u, n_y, fx, fy, draw(st.sampled_from(["tanh", "swish", "relu"])),
                     draw(st.booleans()))


@given(specs(), st.integers(1, 3), st.booleans(), st.integers(0, 2**31 - 1))
def test_pack_unpack_bijective(spec, n_exp, learn_x0, seed):
    rng = np.random.default_rng(seed)
    n = ParamLayout(spec, n_exp, learn_x0).size
    v = rng.standard_normal(n)
    p = unpack_params(v, spec, n_exp, learn_x0)
    assert_array_equal(pack_params(p, spec, learn_x0), v)


@given(st.integers(0, 2**31 - 1))
def test_masked_entries_never_in_vector(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((3, 3)) < 0.5
    spec = ModelSpec(3, 1, 1, structure_mask={"A": mask})
    lay = ParamLayout(spec)
    assert lay.by_name["A"].count == mask.sum()
    v = rng.standard_normal(lay.size)
    p = unpack_params(v, spec)
    assert np.all(p.A[~mask] == 0.0)


def test_zero_model_outputs_zero(rng):
    spec = ModelSpec(2, 2, 1)
    p = unpack_params(np.zeros(ParamLayout(spec).size), spec)
    _, Y = simulate(p, spec, rng.standard_normal((10, 2)))
    assert_array_equal(Y, 0.0)


def test_scalar_two_step_recurrence():
    spec = ModelSpec(1, 1, 1, feedthrough=False)
    X, Y = simulate(scalar_params(), spec, [[1.0], [1.0]])
    assert_array_equal(X.ravel(), [0.0, 1.0])
    assert_array_equal(Y.ravel(), [0.0, 1.0])


def test_hard_saturation_fixed_point():
    spec = ModelSpec(1, 1, 1, feedthrough=False)
    X, _ = simulate(scalar_params(A=2.0, x0=1.0), spec, np.zeros((6, 1)),
                    SaturationConfig(x_sat=1.0))
    assert_array_equal(X.ravel(), 1.0)


def test_nonfinite_reports_step():
    spec = ModelSpec(1, 1, 1, feedthrough=False)
    with pytest.raises(NonFiniteError) as info:
        simulate(scalar_params(A=1e200, x0=1.0), spec, np.zeros((5, 1)),
                 SaturationConfig(mode="none"))
    assert info.value.step == 2


def test_linear_closed_form(rng):
    for _ in range(5):
        spec = ModelSpec(3, 2, 2, feedthrough=True)
        A = rng.standard_normal((3, 3))
        A *= 0.8 / np.max(np.abs(np.linalg.eigvals(A)))
        B, C, D = rng.standard_normal((3, 2)), rng.standard_normal((2, 3)), rng.standard_normal((2, 2))
        x0 = rng.standard_normal(3)
        U = rng.standard_normal((50, 2))
        X, Y = simulate(ModelParams((x0,), A, B, C, D), spec, U)
        for k in (0, 1, 17, 49):
            xk = np.linalg.matrix_power(A, k) @ x0 + sum(
                np.linalg.matrix_power(A, k - 1 - j) @ B @ U[j] for j in range(k))
            assert_allclose(X[k], xk, rtol=1e-10, atol=1e-12)
            assert_allclose(Y[k], C @ xk + D @ U[k], rtol=1e-10, atol=1e-12)


def test_saturation_inactive_is_invisible(rng):
    spec = ModelSpec(2, 1, 1, (4,), (3,))
    p = random_params(spec, rng)
    U = rng.standard_normal((40, 1))
    X1, Y1 = simulate(p, spec, U, SaturationConfig(mode="none"))
    bound = 10 * np.abs(X1).max()
    X2, Y2 = simulate(p, spec, U, SaturationConfig(x_sat=bound))
    assert_array_equal(Y1, Y2)


# -- soft saturation -----------------------------------------------------------

@given(st.floats(0.1, 10), st.floats(0.1, 200))
def test_soft_sat_zero_and_antisymmetry(s, g):
    assert soft_sat(0.0, s, g) == pytest.approx(0.0, abs=1e-12 * s)
    x = np.linspace(-3 * s, 3 * s, 13)
    assert_allclose(soft_sat(-x, s, g), -soft_sat(x, s, g), atol=1e-12 * s)


def test_soft_sat_large_argument():
    # 60-digit evaluation gives 1 - O(exp(-900))
    assert abs(soft_sat(10.0, 1.0, 100.0) - 1.0) < 1e-3
    assert np.isfinite(soft_sat(1e6, 1.0, 1e3))


def test_soft_sat_approaches_hard():
    x = np.linspace(-3, 3, 601)
    devs = [np.max(np.abs(soft_sat(x, 1.0, g) - hard_sat(x, 1.0))) for g in (5, 20, 50)]
    # high-precision reference: ln(2)/gamma at |x| = x_sat
    assert_allclose(devs, [0.13862035633214564, 0.03465735902799727, 0.013862943611198886],
                    rtol=1e-9)
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 0.02


def test_soft_sat_bounded_and_gradient():
    x = np.linspace(-50, 50, 1001)
    y = soft_sat(x, 2.0, 3.0)
    assert np.all(np.abs(y) <= 2.0)
    assert np.all(np.abs(soft_sat(np.linspace(-1, 1, 11), 2.0, 3.0)) < 2.0)
    h = 1e-6
    fd = (soft_sat(x + h, 2.0, 3.0) - soft_sat(x - h, 2.0, 3.0)) / (2 * h)
    assert_allclose(soft_sat_grad(x, 2.0, 3.0), fd, atol=1e-8)


def test_soft_sat_rejects_bad_gamma():
    with pytest.raises(ModelError):
        soft_sat(1.0, 1.0, 0.0)


def test_step_batch_and_jacobians(rng):
    spec = ModelSpec(3, 2, 2, (5,), (4,), "tanh", feedthrough=False)
    p = random_params(spec, rng, std=0.5)
    X = rng.standard_normal((4, 3))
    U = rng.standard_normal((4, 2))
    Xn, Yb = step_batch(p, spec, X, U)
    for i in range(4):
        xn, y = step(p, spec, X[i], U[i])
        assert_allclose(Xn[i], xn, atol=1e-14)
        assert_allclose(Yb[i], y, atol=1e-14)
    x, u, h = X[0], U[0], 1e-6
    _, Jf, _, Jg = step_jacobians(p, spec, x, u)
    E = np.eye(3)
    fd_f = np.column_stack([(step(p, spec, x + h * e, u)[0] - step(p, spec, x - h * e, u)[0]) / (2 * h) for e in E])
    fd_g = np.column_stack([(step(p, spec, x + h * e, u)[1] - step(p, spec, x - h * e, u)[1]) / (2 * h) for e in E])
    assert_allclose(Jf, fd_f, atol=1e-8)
    assert_allclose(Jg, fd_g, atol=1e-8)


def test_spec_validation():
    with pytest.raises(ModelError):
        ModelSpec(0, 1, 1)
    with pytest.raises(ModelError):
        ModelSpec(1, 1, 1, fx_layers=(0,))
    with pytest.raises(ModelError):
        ModelSpec(1, 1, 1, activation="gelu")
    with pytest.raises(ModelError, match="shape"):
        ModelSpec(2, 1, 1, structure_mask={"A": [[True]]})
    with pytest.raises(ModelError):
        SaturationConfig(x_sat=-1.0)
