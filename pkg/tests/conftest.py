"""Shared fixtures: small meshes, laws and corrector tables reused across tests."""

import numpy as np
import pytest

from homsim import homog, materials
from homsim.mesh import MATRIX, PhaseGeometry, build_macro_mesh, build_unit_cell_mesh


@pytest.fixture(scope="session")
def disk_cell_mesh():
    return build_unit_cell_mesh(PhaseGeometry("disk", radius=0.25), 0.2)


@pytest.fixture(scope="session")
def fine_disk_cell_mesh():
    return build_unit_cell_mesh(PhaseGeometry("disk", radius=0.25), 0.12)


@pytest.fixture(scope="session")
def stripe_cell_mesh():
    return build_unit_cell_mesh(PhaseGeometry("stripe", band=(0.25, 0.75)), 0.1)


@pytest.fixture(scope="session")
def macro_mesh():
    return build_macro_mesh(0.1)


@pytest.fixture(scope="session")
def example_law():
    return materials.MaterialLaw()


@pytest.fixture(scope="session")
def uniform_law():
    return materials.uniform_law(materials.EXAMPLE_LAWS[MATRIX])


@pytest.fixture(scope="session")
def small_table(disk_cell_mesh, example_law):
    """Composite corrector table on the coarse disk cell (3 temperatures)."""
    return homog.build_table(disk_cell_mesh, example_law, 280.0, 400.0, 3,
                             Ttilde=300.0)


@pytest.fixture(scope="session")
def uniform_table(disk_cell_mesh, uniform_law):
    """Degenerate (single-material) table on the coarse disk cell."""
    return homog.build_table(disk_cell_mesh, uniform_law, 280.0, 400.0, 3,
                             Ttilde=300.0)


def constant_problem_data(value_T=300.0, f_T=0.0, f_Phi=0.0, f_U=0.0):
    """ProblemData with constant sources and boundary values."""
    from homsim.macro import ProblemData

    zvec = lambda pts, t: np.zeros((len(pts), 2))
    return ProblemData(
        f_T=lambda pts, t: np.full(len(pts), float(f_T)),
        f_Phi=lambda pts, t: np.full(len(pts), float(f_Phi)),
        f_U=lambda pts, t: np.full((len(pts), 2), float(f_U)),
        bc_T=lambda pts, t: np.full(len(pts), float(value_T)),
        bc_Phi=lambda pts, t: np.zeros(len(pts)),
        bc_U=zvec,
        T_init=float(value_T),
        U_init=zvec,
        V_init=zvec,
    )
