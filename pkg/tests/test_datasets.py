import hashlib

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from sparsysid.datasets import (DataError, Dataset, export_csv, gen_causal, gen_input_selection,
                                gen_order_reduction, load_csv, order_reduction_system,
                                read_sidecar)
from sparsysid.model import spectral_radius


def digest(ds):
    h = hashlib.sha256()
    for U, Y in ds.experiments:
        h.update(U.tobytes())
        h.update(Y.tobytes())
    return h.hexdigest()


def test_order_reduction_printed_matrices():
    sys = order_reduction_system()
    assert_array_equal(sys.A[1], [-0.26, 0.70, 0.26, 0, 0, 0])
    assert_array_equal(sys.A[5], [0, 0, 0, 0, -0.38, 0.52])
    assert_array_equal(sys.B[:, 0], [0, 0, 0.07, 0.32, 0, 0])
    assert_array_equal(sys.B[:, 1], [0, 0, 0, 0, 0.10, 0.38])
    C = np.zeros((2, 6))
    C[0, 0] = C[1, 2] = 1
    assert_array_equal(sys.C, C)
    assert spectral_radius(sys.A) < 1


def test_order_reduction_shapes_and_noise():
    ds, _ = gen_order_reduction(seed=0)
    assert ds.lengths == [2000]
    assert (ds.n_u, ds.n_y) == (2, 2)
    assert ds.descriptor["generator"] == "order_reduction"


def test_order_reduction_noiseless_matches_true_system():
    ds, sys = gen_order_reduction(seed=5, N=50, noise_std=0.0)
    U, Y = ds.experiments[0]
    x = np.zeros(6)
    for k in range(50):
        assert_allclose(Y[k], sys.C @ x, atol=1e-15)
        x = sys.A @ x + sys.B @ U[k]


@given(st.integers(0, 2**32 - 1))
def test_generated_systems_are_stable(seed):
    _, s1 = gen_input_selection(seed, N=5)
    _, s2 = gen_causal(seed, N=5)
    assert spectral_radius(s1.A) < 1
    assert spectral_radius(s2.A) < 1


def test_input_selection_structure():
    ds, sys = gen_input_selection(seed=3)
    assert ds.lengths == [10000]
    assert (ds.n_u, ds.n_y) == (10, 1)
    ratio = np.linalg.norm(sys.B[:, 5:]) / np.linalg.norm(sys.B[:, :5])
    assert ratio < 1e-2


def test_causal_stacking():
    ds, sys = gen_causal(seed=4)
    U, Y = ds.experiments[0]
    assert ds.lengths == [1000]
    assert (ds.n_u, ds.n_y) == (10, 10)
    assert_array_equal(U, Y)
    assert_array_equal(sys.D, 0.0)
    # last five channels are the excitation: white, unit variance
    assert_allclose(U[:, 5:].std(axis=0), 1.0, atol=0.1)


def test_generators_deterministic():
    for gen in (gen_order_reduction, gen_input_selection, gen_causal):
        a, _ = gen(seed=11)
        b, _ = gen(seed=11)
        c, _ = gen(seed=12)
        assert digest(a) == digest(b)
        assert digest(a) != digest(c)


def test_csv_minimal(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("u1,y1\n1,2\n")
    ds = load_csv(str(p), 1, 1)
    assert ds.n_experiments == 1 and ds.lengths == [1]
    assert_array_equal(ds.experiments[0][1], [[2.0]])


def test_csv_roundtrip(tmp_path):
    ds, _ = gen_order_reduction(seed=2, N=300)
    p = str(tmp_path / "or.csv")
    export_csv(ds, p)
    back = load_csv(p, 2, 2)
    assert_allclose(back.experiments[0][0], ds.experiments[0][0], rtol=1e-12)
    assert_allclose(back.experiments[0][1], ds.experiments[0][1], rtol=1e-12)
    assert back.descriptor == ds.descriptor
    assert read_sidecar(p)["experiment_boundaries"] == [0, 300]


def test_csv_boundaries(tmp_path):
    p = tmp_path / "b.csv"
    rows = "\n".join(f"{k},{2 * k}" for k in range(250))
    p.write_text("u1,y1\n" + rows + "\n")
    ds = load_csv(str(p), 1, 1, [0, 100, 250])
    assert ds.lengths == [100, 150]
    assert ds.experiments[1][0][0, 0] == 100.0
    with pytest.raises(DataError, match="partition"):
        load_csv(str(p), 1, 1, [0, 300])


@pytest.mark.parametrize("body,line", [("1,2\n3\n", 3), ("1,2\nx,1\n", 3), ("1,2\n1,nan\n", 3)])
def test_csv_bad_rows_report_line(tmp_path, body, line):
    p = tmp_path / "bad.csv"
    p.write_text("u1,y1\n" + body)
    with pytest.raises(DataError, match=f"line {line}"):
        load_csv(str(p), 1, 1)


def test_csv_requires_header(tmp_path):
    p = tmp_path / "nh.csv"
    p.write_text("1,2\n3,4\n")
    with pytest.raises(DataError, match="header"):
        load_csv(str(p), 1, 1)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset([(np.zeros((3, 1)), np.zeros((4, 1)))])
    with pytest.raises(DataError):
        Dataset([(np.zeros((3, 1)), np.zeros((3, 1))), (np.zeros((3, 2)), np.zeros((3, 1)))])
    with pytest.raises(DataError):
        Dataset([])


def test_split_head_tail():
    ds, _ = gen_order_reduction(seed=0, N=100)
    a, b = ds.split(60)
    assert a.lengths == [60] and b.lengths == [40]
    assert_array_equal(b.experiments[0][0][0], ds.experiments[0][0][60])
