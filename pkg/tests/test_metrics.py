"""Discrete norms and the evolutive error table."""

import numpy as np
import pytest

from homsim import metrics
from homsim.mesh import build_macro_mesh


@pytest.fixture(scope="module")
def mesh():
    return build_macro_mesh(0.1)


def test_l2_norm_of_constant(mesh):
    v = np.full(mesh.num_nodes, 3.0)
    assert metrics.l2_norm(mesh, v) == pytest.approx(3.0, rel=1e-12)


def test_l2_norm_of_linear(mesh):
    v = mesh.nodes[:, 0]
    assert metrics.l2_norm(mesh, v) == pytest.approx(np.sqrt(1.0 / 3.0), rel=1e-12)


def test_h1_seminorm_of_linear(mesh):
    v = 2.0 * mesh.nodes[:, 0] - mesh.nodes[:, 1]
    assert metrics.h1_seminorm(mesh, v) == pytest.approx(np.sqrt(5.0), rel=1e-12)


def test_vector_norms_sum_components(mesh):
    U = np.stack([np.full(mesh.num_nodes, 3.0), np.full(mesh.num_nodes, 4.0)])
    assert metrics.l2_norm(mesh, U) == pytest.approx(5.0, rel=1e-12)


def test_relative_error_constant_offset(mesh):
    """Reference (1,1) against approximation (1.1, 0.9) -> 10% in L2."""
    ref = np.ones((2, mesh.num_nodes))
    approx = np.stack([np.full(mesh.num_nodes, 1.1), np.full(mesh.num_nodes, 0.9)])
    err = metrics.relative_error(mesh, approx, ref, "L2")
    assert err == pytest.approx(0.1, rel=1e-12)


def test_relative_error_zero_reference_raises(mesh):
    with pytest.raises(ValueError):
        metrics.relative_error(mesh, np.ones(mesh.num_nodes),
                               np.zeros(mesh.num_nodes), "L2")


def test_unknown_norm_rejected(mesh):
    with pytest.raises(ValueError):
        metrics.norm(mesh, np.ones(mesh.num_nodes), "Linf")


def test_error_series_columns_and_csv(tmp_path):
    series = metrics.ErrorSeries()
    assert len(metrics.COLUMNS) == 18
    row = {c: float(i) for i, c in enumerate(metrics.COLUMNS)}
    series.append(0.5, row)
    series.append(1.0, {c: 2.0 * v for c, v in row.items()})
    assert series.final("T", "order0", "L2") == 0.0
    assert series.final("U", "order2", "H1") == 2.0 * 17.0
    p = tmp_path / "err.csv"
    series.to_csv(p)
    header = open(p).readline().strip().split(",")
    assert header == ["t"] + metrics.COLUMNS
    data = np.loadtxt(p, delimiter=",", skiprows=1)
    assert data.shape == (2, 19)
    assert data[0, 0] == 0.5
