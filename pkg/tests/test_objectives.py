import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from sparsysid.datasets import Dataset
from sparsysid.model import ModelSpec, ParamLayout
from sparsysid.objectives import (GroupIndexSet, RegularizationConfig, Scaler, build_groups,
                                  mse_loss, r2_average, r2_score, regularizer_subgrad,
                                  regularizer_value, standard_scale_apply, standard_scale_fit,
                                  standard_scale_invert)


def test_mse_examples(rng):
    y = rng.standard_normal((5, 2))
    assert mse_loss(y, y) == 0.0
    assert mse_loss([1.0, 1.0], [0.0, 0.0]) == 1.0
    yh = rng.standard_normal((5, 2))
    ref = 0.0
    for k in range(5):
        for i in range(2):
            ref += (y[k, i] - yh[k, i]) ** 2
    assert_allclose(mse_loss(y, yh), ref / 5, rtol=1e-15)


def test_mse_shape_mismatch():
    with pytest.raises(ValueError):
        mse_loss(np.zeros(3), np.zeros(4))


def test_state_group_linear_enumeration():
    spec = ModelSpec(2, 1, 1, feedthrough=False)
    groups = build_groups(spec, "state_groups")
    lay = ParamLayout(spec)
    # x0_1, A_11, A_12, A_21, B_1, C_1
    g0 = groups.groups[0]
    assert len(g0) == 6
    A = lay.by_name["A"].flat_indices()
    assert set(g0) == {lay.by_name["x0[0]"].flat_indices()[0], A[0, 0], A[0, 1], A[1, 0],
                       lay.by_name["B"].flat_indices()[0, 0], lay.by_name["C"].flat_indices()[0, 0]}


def test_input_groups_with_masked_feedthrough():
    spec = ModelSpec(3, 2, 1, feedthrough=True, structure_mask={"D": [[False, False]]})
    groups = build_groups(spec, "input_groups")
    B = ParamLayout(spec).by_name["B"].flat_indices()
    for i in range(2):
        assert_array_equal(np.sort(groups.groups[i]), np.sort(B[:, i]))


def test_state_group_size_recurrent_network():
    spec = ModelSpec(12, 6, 6, (36,), (24,), feedthrough=False)
    groups = build_groups(spec, "state_groups")
    assert {len(g) for g in groups.groups} == {133}


def test_state_groups_with_several_experiments():
    spec = ModelSpec(2, 1, 1)
    g = build_groups(spec, "state_groups", n_experiments=3)
    lay = ParamLayout(spec, 3)
    x0s = {lay.by_name[f"x0[{j}]"].flat_indices()[0] for j in range(3)}
    assert x0s <= set(g.groups[0])


def test_regularizer_examples():
    cfg = RegularizationConfig(rho_theta=2.0)
    assert regularizer_value(np.zeros(4), cfg) == 0.0
    assert regularizer_value([1.0, 1.0], cfg) == 2.0
    cfg = RegularizationConfig(tau_g=1.0, group_kind="state_groups")
    assert regularizer_value([3.0, 4.0], cfg, GroupIndexSet([np.array([0, 1])])) == 5.0


def test_regularizer_separates_initial_state():
    cfg = RegularizationConfig(rho_theta=1.0, rho_x=4.0, tau=1.0)
    v = np.array([2.0, -1.0, 3.0])
    # x0 = v[0]: 1/2*4*4 ; theta: 1/2*(1+9) + (1+3)
    assert regularizer_value(v, cfg, x0_indices=[0]) == 8.0 + 5.0 + 4.0


@given(st.integers(0, 10_000))
def test_subgradient_matches_gradient_where_smooth(seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.1, 2.0, 6) * rng.choice([-1, 1], 6)
    cfg = RegularizationConfig(rho_theta=0.3, rho_x=0.7, tau=0.2, tau_g=0.5,
                               group_kind="state_groups")
    groups = GroupIndexSet([np.array([0, 1, 2]), np.array([3, 4])])
    g = regularizer_subgrad(v, cfg, groups, [5])
    h = 1e-7
    fd = [(regularizer_value(v + h * e, cfg, groups, [5]) - regularizer_value(v - h * e, cfg, groups, [5])) / (2 * h)
          for e in np.eye(6)]
    assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_regularization_config_validation():
    with pytest.raises(ValueError):
        RegularizationConfig(tau=-1)
    with pytest.raises(ValueError):
        RegularizationConfig(tau_g=1.0)
    with pytest.raises(ValueError):
        RegularizationConfig(tau_g=1.0, epsilon=0.0, group_kind="input_groups")


def test_r2_examples():
    y = np.array([0.0, 1.0, 2.0])
    assert r2_score(y, y) == 100.0
    assert r2_score(y, np.full(3, y.mean())) == 0.0
    assert_allclose(r2_score(y, np.zeros(3)), -150.0)


def test_r2_per_output_and_average(rng):
    y = rng.standard_normal((50, 3))
    yh = y + 0.1 * rng.standard_normal((50, 3))
    r2 = r2_score(y, yh)
    assert r2.shape == (3,)
    assert_allclose(r2_average(y, yh), r2.mean())


def test_r2_zero_variance():
    with pytest.raises(ValueError, match="output 1"):
        r2_score(np.array([[0.0, 1.0], [1.0, 1.0]]), np.zeros((2, 2)))


def test_scaling_examples(rng):
    mean, std = standard_scale_fit([0.0, 2.0])
    assert_allclose(mean, [1.0])
    assert_allclose(std, [1.0])
    assert_allclose(standard_scale_apply([[0.0], [2.0]], mean, std).ravel(), [-1, 1])
    x = 3.0 + 1e-3 * rng.standard_normal((100, 2))
    m, s = standard_scale_fit(x)
    assert_allclose(standard_scale_invert(standard_scale_apply(x, m, s), m, s), x, atol=1e-12)


def test_constant_channel_is_rejected():
    with pytest.raises(ValueError, match="u2"):
        Scaler.fit(Dataset([(np.column_stack([np.arange(4.0), np.ones(4)]), np.arange(4.0))]))


def test_scaler_uses_training_statistics(rng):
    train = Dataset([(rng.standard_normal((200, 1)), rng.standard_normal((200, 1)))])
    test = Dataset([(5 + rng.standard_normal((50, 1)), rng.standard_normal((50, 1)))])
    sc = Scaler.fit(train)
    scaled = sc.apply(test)
    # test inputs are offset by 5 and must stay offset after scaling with train stats
    assert scaled.experiments[0][0].mean() > 3
    back = sc.invert(scaled)
    assert_allclose(back.experiments[0][0], test.experiments[0][0], atol=1e-12)
    assert_allclose(Scaler.from_dict(sc.to_dict()).u_std, sc.u_std)
