"""Fine-mesh reference solver for the oscillatory-coefficient system.

The fine mesh is the unit-cell mesh scaled by epsilon and tiled over the unit
square, so the matrix/inclusion interface is mesh-conforming in every cell.
Time stepping reuses the engine of the homogenized solver; only the
coefficient provider differs (phase-wise laws evaluated at quadrature-point
temperatures instead of tabulated effective coefficients).
"""

from __future__ import annotations

import numpy as np

from . import fem
from .macro import Stepper, TimeGrid, Trajectory
from .mesh import Mesh, MeshError


def build_tiled_mesh(cell_mesh: Mesh, epsilon: float) -> Mesh:
    """Tile the scaled unit-cell mesh over [0,1]^2 (epsilon = 1/q)."""
    q = round(1.0 / epsilon)
    if abs(q * epsilon - 1.0) > 1e-12:
        raise MeshError(f"epsilon must be a reciprocal integer, got {epsilon}")
    nodes = []
    tris = []
    tags = []
    nn = cell_mesh.num_nodes
    for i in range(q):
        for j in range(q):
            off = (i * q + j) * nn
            nodes.append((cell_mesh.nodes + [i, j]) * epsilon)
            tris.append(cell_mesh.triangles + off)
            tags.append(cell_mesh.phase_tag)
    nodes = np.concatenate(nodes)
    tris = np.concatenate(tris)
    tags = np.concatenate(tags)
    # merge coincident nodes along tile seams
    key = np.round(nodes, 9)
    _, first_idx, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    merged_nodes = nodes[first_idx]
    merged_tris = inverse[tris]
    return Mesh(merged_nodes, merged_tris, tags)


class OscillatoryProvider:
    """Phase-wise coefficients at quadrature-point temperatures."""

    def __init__(self, mesh: Mesh, law):
        self.mesh = mesh
        self.law = law
        _, _, self._phi = fem.quad_points(mesh)
        self._ab = {}
        for q in ("rho", "c", "k", "lam", "beta"):
            a = np.empty(mesh.num_triangles)
            b = np.empty(mesh.num_triangles)
            for ph in law.phases:
                sel = mesh.phase_tag == ph
                a[sel], b[sel] = law.coeffs[ph][q]
            self._ab[q] = (a, b)
        # elasticity: nu is per-phase constant, E affine, so the Lame pair is affine
        la_a = np.empty(mesh.num_triangles)
        la_b = np.empty(mesh.num_triangles)
        mu_a = np.empty(mesh.num_triangles)
        mu_b = np.empty(mesh.num_triangles)
        for ph in law.phases:
            sel = mesh.phase_tag == ph
            Ea, Eb = law.coeffs[ph]["E"]
            nu = law.coeffs[ph]["nu"][0]
            if law.plane == "strain":
                lf = nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
            else:
                lf = nu / (1.0 - nu**2)
            mf = 1.0 / (2.0 * (1.0 + nu))
            la_a[sel], la_b[sel] = Ea * lf, Eb * lf
            mu_a[sel], mu_b[sel] = Ea * mf, Eb * mf
        self._lame = (la_a, la_b)
        self._mu = (mu_a, mu_b)
        d = np.eye(2)
        self._I4_lam = np.einsum("ij,kl->ijkl", d, d)
        self._I4_mu = np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)
        wsum = np.zeros(mesh.num_nodes)
        np.add.at(wsum, mesh.triangles.ravel(), np.repeat(mesh.areas, 3))
        self._wsum = wsum

    def _scal(self, q, T_qp):
        a, b = self._ab[q]
        return a[:, None] + b[:, None] * T_qp

    def __call__(self, T_nodal):
        T_qp = np.einsum("ta,qa->tq", np.asarray(T_nodal)[self.mesh.triangles], self._phi)
        # constant extension outside the validity range of the affine laws
        # (mirrors the clamping of the tabulated effective coefficients)
        T_qp = np.clip(T_qp, *self.law.T_range)
        d = np.eye(2)
        k = self._scal("k", T_qp)[..., None, None] * d
        lam = self._scal("lam", T_qp)[..., None, None] * d
        beta = self._scal("beta", T_qp)[..., None, None] * d
        la = (self._lame[0][:, None] + self._lame[1][:, None] * T_qp)
        mu = (self._mu[0][:, None] + self._mu[1][:, None] * T_qp)
        c = (la[..., None, None, None, None] * self._I4_lam
             + mu[..., None, None, None, None] * self._I4_mu)
        return {
            "S": self._scal("rho", T_qp) * self._scal("c", T_qp),
            "k": k,
            "lam": lam,
            "lam_star": lam,
            "beta_star": beta,
            "rho": self._scal("rho", T_qp),
            "c": c,
            "beta": beta,
        }

    def nodal_beta_star(self, T_nodal):
        """Nodal thermal modulus beta*_ij = beta delta_ij.

        The affine coefficients are area-averaged to the nodes once, then
        evaluated at the nodal temperature, so single-phase laws reproduce
        beta(T_node) exactly.
        """
        if not hasattr(self, "_beta_nodal_ab"):
            a, b = self._ab["beta"]
            na = np.zeros(self.mesh.num_nodes)
            nb = np.zeros(self.mesh.num_nodes)
            np.add.at(na, self.mesh.triangles.ravel(), np.repeat(a * self.mesh.areas, 3))
            np.add.at(nb, self.mesh.triangles.ravel(), np.repeat(b * self.mesh.areas, 3))
            self._beta_nodal_ab = (na / self._wsum, nb / self._wsum)
        na, nb = self._beta_nodal_ab
        nodal = na + nb * np.clip(np.asarray(T_nodal), *self.law.T_range)
        out = np.zeros((2, 2, self.mesh.num_nodes))
        out[0, 0] = nodal
        out[1, 1] = nodal
        return out


def run_dns(fine_mesh: Mesh, law, data, grid: TimeGrid,
            snapshot_stride: int = 1) -> Trajectory:
    """Integrate the oscillatory-coefficient system on the fine mesh."""
    stepper = Stepper(fine_mesh, OscillatoryProvider(fine_mesh, law), data, grid,
                      snapshot_stride=snapshot_stride)
    traj = stepper.run()
    traj.meta["solver"] = "dns"
    return traj
