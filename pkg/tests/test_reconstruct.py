"""Multi-scale reconstruction: sampling, order consistency, degeneracy."""

import numpy as np
import pytest

from homsim import dns, macro, reconstruct
from homsim.mesh import build_macro_mesh

from conftest import constant_problem_data


@pytest.fixture(scope="module")
def driven_run(macro_mesh, small_table):
    data = constant_problem_data(value_T=300.0, f_T=2000.0, f_Phi=20.0, f_U=500.0)
    grid = macro.TimeGrid(dt=1e-3, n_steps=10)
    stepper = macro.Stepper(macro_mesh, macro.TableProvider(macro_mesh, small_table),
                            data, grid, snapshot_stride=10)
    return stepper.run()


def test_cell_sampler_weights_partition_unity(disk_cell_mesh, small_table):
    pts = np.random.default_rng(0).random((50, 2))
    cs = reconstruct.CellSampler(disk_cell_mesh, small_table.temps, pts, 0.25)
    w = cs.weights(np.linspace(250.0, 420.0, 50))
    assert np.allclose(w.sum(axis=0), 1.0, atol=1e-12)


def test_cell_sampler_exact_at_slot_temperature(disk_cell_mesh, small_table):
    """Sampling a linear-in-y nodal function at a slot temperature is exact."""
    rng = np.random.default_rng(1)
    pts = rng.random((100, 2)) * 0.25  # all inside the first cell for eps=1/4
    cs = reconstruct.CellSampler(disk_cell_mesh, small_table.temps, pts, 0.25)
    lin = [2.0 * disk_cell_mesh.nodes[:, 0] + 3.0 * disk_cell_mesh.nodes[:, 1] + i
           for i in range(len(small_table.temps))]
    T0 = np.full(100, float(small_table.temps[1]))
    vals = cs.sample(lin, T0)
    y = pts / 0.25
    assert np.allclose(vals, 2.0 * y[:, 0] + 3.0 * y[:, 1] + 1.0, atol=1e-10)


def test_cell_sampler_linear_between_slots(disk_cell_mesh, small_table):
    pts = np.random.default_rng(2).random((20, 2)) * 0.25
    cs = reconstruct.CellSampler(disk_cell_mesh, small_table.temps, pts, 0.25)
    const = [np.full(disk_cell_mesh.num_nodes, float(i)) for i in range(3)]
    Ta, Tb = small_table.temps[0], small_table.temps[1]
    vals = cs.sample(const, np.full(20, 0.25 * Ta + 0.75 * Tb))
    assert np.allclose(vals, 0.75, atol=1e-12)


def test_homs_equals_loms_plus_terms(macro_mesh, disk_cell_mesh, small_table,
                                     driven_run):
    eps = 0.25
    fine = dns.build_tiled_mesh(disk_cell_mesh, eps)
    rec = reconstruct.Reconstructor(macro_mesh, disk_cell_mesh, small_table,
                                    eps, fine)
    snap = driven_run.snapshots[-1]
    dt = driven_run.grid.dt
    h1, st = rec.loms(snap, dt)
    h2, _ = rec.homs(snap, dt, _st=st)
    terms = h2["terms"]
    for f, keys in (("T", "T:"), ("Phi", "Phi:"), ("U", "U:")):
        total = sum(v for k, v in terms.items() if k.startswith(keys))
        assert np.allclose(h2[f], h1[f] + eps**2 * total, atol=1e-12, rtol=1e-12)


def test_all_sixteen_terms_present(macro_mesh, disk_cell_mesh, small_table,
                                   driven_run):
    fine = dns.build_tiled_mesh(disk_cell_mesh, 0.25)
    rec = reconstruct.Reconstructor(macro_mesh, disk_cell_mesh, small_table,
                                    0.25, fine)
    h2, _ = rec.homs(driven_run.snapshots[-1], driven_run.grid.dt)
    expected = {"T:Q", "T:M2", "T:R", "T:O", "T:G", "T:J",
                "Phi:H2", "Phi:Z", "Phi:W",
                "U:N2", "U:F", "U:X", "U:A", "U:B", "U:C", "U:D"}
    assert set(h2["terms"]) == expected


def test_degenerate_correctors_leave_fields_unchanged(macro_mesh, disk_cell_mesh,
                                                      uniform_table):
    data = constant_problem_data(value_T=300.0, f_T=2000.0, f_Phi=20.0, f_U=500.0)
    grid = macro.TimeGrid(dt=1e-3, n_steps=5)
    traj = macro.Stepper(macro_mesh, macro.TableProvider(macro_mesh, uniform_table),
                         data, grid, snapshot_stride=5).run()
    fine = dns.build_tiled_mesh(disk_cell_mesh, 0.25)
    rec = reconstruct.Reconstructor(macro_mesh, disk_cell_mesh, uniform_table,
                                    0.25, fine)
    h0, h1, h2 = rec.all_orders(traj.snapshots[-1], grid.dt)
    for f in ("T", "Phi", "U"):
        scale = max(np.abs(h0[f]).max(), 1e-12)
        assert np.abs(h1[f] - h0[f]).max() < 1e-10 * scale
        assert np.abs(h2[f] - h0[f]).max() < 1e-10 * scale


def test_macro_evaluator_interpolates_fields(macro_mesh):
    pts = np.random.default_rng(5).random((40, 2))
    ev = reconstruct.MacroEvaluator(macro_mesh, pts)
    nodal = macro_mesh.nodes[:, 0] ** 2  # P1-representable only approximately
    lin = 2.0 + macro_mesh.nodes @ np.array([1.0, -3.0])
    assert np.allclose(ev.scalar(lin), 2.0 + pts @ np.array([1.0, -3.0]), atol=1e-12)
    g = ev.gradient(lin)
    assert np.allclose(g, np.array([1.0, -3.0]), atol=1e-10)
    h = ev.hessian(nodal)
    assert h.shape == (40, 2, 2)


def test_bad_epsilon_rejected(macro_mesh, disk_cell_mesh, small_table):
    with pytest.raises(ValueError):
        reconstruct.Reconstructor(macro_mesh, disk_cell_mesh, small_table,
                                  0.3, build_macro_mesh(0.3))
