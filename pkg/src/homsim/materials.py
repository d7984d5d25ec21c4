"""Temperature-dependent, phase-wise material laws and derived tensors.

Each scalar property follows an affine law a + b*T per phase, which makes the
first temperature derivative constant and the second identically zero.  The
engineering pair (E, nu) is converted to the 2D elasticity tensor c_ijkl in
plane strain (default) or plane stress.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import MATRIX, INCLUSION

QUANTITIES = ("rho", "c", "k", "lam", "beta", "E", "nu")

#: baseline two-phase property set used by the shipped example configuration
EXAMPLE_LAWS = {
    MATRIX: {
        "rho": (0.008, 0.0),
        "c": (562.5, 0.0),
        "k": (4.0, 0.0004),
        "lam": (300.0, -0.015),
        "beta": (3.0, -0.0003),
        "E": (3.5e6, -3.5e3),
        "nu": (0.25, 0.0),
    },
    INCLUSION: {
        "rho": (0.002, 0.0),
        "c": (750.0, 0.0),
        "k": (0.04, 0.000004),
        "lam": (0.075, -0.00000325),
        "beta": (7.5, -0.00075),
        "E": (2.2e6, -2.2e3),
        "nu": (0.20, 0.0),
    },
}


class MaterialError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialLaw:
    """Affine-in-temperature property laws for the two phases.

    coeffs[phase][quantity] = (a, b) meaning a + b*T.  Properties are
    isotropic: the conductivity/coupling tensors are value * identity.
    """

    coeffs: dict = field(default_factory=lambda: EXAMPLE_LAWS)
    T_range: tuple[float, float] = (250.0, 900.0)
    plane: str = "strain"
    kappa0: float = 1e-8

    def __post_init__(self):
        if self.plane not in ("strain", "stress"):
            raise MaterialError(f"plane mode must be 'strain' or 'stress', got {self.plane!r}")
        for phase, table in self.coeffs.items():
            missing = set(QUANTITIES) - set(table)
            if missing:
                raise MaterialError(f"phase {phase}: missing quantities {sorted(missing)}")

    @property
    def phases(self):
        return sorted(self.coeffs)

    def eval(self, phase, quantity, T, order: int = 0):
        """Value (order 0) or T-derivative (order 1, 2) of a property.

        T may be a scalar or an array; affine laws give order-1 values that
        are independent of T and order-2 values that are exactly zero.
        """
        try:
            a, b = self.coeffs[phase][quantity]
        except KeyError:
            raise MaterialError(f"unknown phase/quantity ({phase!r}, {quantity!r})") from None
        T = np.asarray(T, dtype=float)
        if order == 0:
            return a + b * T
        if order == 1:
            return np.broadcast_to(np.float64(b), T.shape).copy() if T.ndim else float(b)
        if order == 2:
            return np.zeros_like(T) if T.ndim else 0.0
        raise MaterialError(f"derivative order must be 0, 1 or 2, got {order}")

    def in_range(self, T) -> bool:
        T = np.asarray(T)
        return bool(np.all((T >= self.T_range[0]) & (T <= self.T_range[1])))

    def thermal_modulus_tensor(self, phase, T, order: int = 0):
        """beta_ij = beta(T) * delta_ij (2x2)."""
        return self.eval(phase, "beta", T, order) * np.eye(2)

    def conductivity_tensor(self, phase, quantity, T, order: int = 0):
        """k_ij or lambda_ij as value * identity (2x2)."""
        return self.eval(phase, quantity, T, order) * np.eye(2)

    def elasticity(self, phase, T, order: int = 0):
        """c_ijkl(T) for a phase; order 1 gives dc/dT (nu is T-independent)."""
        E = self.eval(phase, "E", T, order)
        nu = self.eval(phase, "nu", T, 0)
        if order > 0 and self.coeffs[phase]["nu"][1] != 0.0:
            raise MaterialError("temperature-dependent Poisson ratio is not supported")
        return elasticity_tensor(E, nu, self.plane, _validate=(order == 0))

    def audit_ellipticity(self, n_sweep: int = 100):
        """Check positivity/ellipticity of every property over the T range.

        Returns the minimum margin found; raises if any coefficient or the
        smallest elasticity eigenvalue drops below kappa0.
        """
        Ts = np.linspace(*self.T_range, n_sweep)
        worst = np.inf
        for phase in self.phases:
            for q in ("rho", "c", "k", "lam", "beta", "E"):
                vals = self.eval(phase, q, Ts)
                worst = min(worst, float(vals.min()))
                if vals.min() < self.kappa0:
                    raise MaterialError(
                        f"{q} for phase {phase} drops to {vals.min():.3g} on the operating range"
                    )
            nus = self.eval(phase, "nu", Ts)
            if nus.min() <= 0.0 or nus.max() >= 0.5:
                raise MaterialError(f"nu for phase {phase} leaves (0, 0.5)")
            for T in (Ts[0], Ts[-1]):
                c = self.elasticity(phase, T)
                ev = np.linalg.eigvalsh(_voigt(c)).min()
                worst = min(worst, float(ev))
                if ev < self.kappa0:
                    raise MaterialError(f"elasticity tensor for phase {phase} loses definiteness")
        return worst


def elasticity_tensor(E, nu, plane: str = "strain", _validate: bool = True):
    """Isotropic 2D elasticity tensor c_ijkl from engineering constants.

    Plane strain: lame = E nu /((1+nu)(1-2nu)), mu = E/(2(1+nu)).
    Plane stress uses the standard substitution E' = E(1+2nu)/(1+nu)^2 style
    reduction implemented via lame* = E nu/(1-nu^2).
    """
    if _validate:
        if not np.all(np.asarray(E) > 0):
            raise MaterialError(f"E must be positive, got {E}")
        if not (0 <= nu < 0.5):
            raise MaterialError(f"nu must lie in [0, 0.5), got {nu}")
    mu = E / (2.0 * (1.0 + nu))
    if plane == "strain":
        lame = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    elif plane == "stress":
        lame = E * nu / (1.0 - nu**2)
    else:
        raise MaterialError(f"unknown plane mode {plane!r}")
    d = np.eye(2)
    c = (
        lame * np.einsum("ij,kl->ijkl", d, d)
        + mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
    )
    return c


def _voigt(c):
    """2D Voigt matrix (11, 22, 12) with engineering shear factor for eigencheck."""
    return np.array(
        [
            [c[0, 0, 0, 0], c[0, 0, 1, 1], c[0, 0, 0, 1] * np.sqrt(2)],
            [c[1, 1, 0, 0], c[1, 1, 1, 1], c[1, 1, 0, 1] * np.sqrt(2)],
            [c[0, 1, 0, 0] * np.sqrt(2), c[0, 1, 1, 1] * np.sqrt(2), 2 * c[0, 1, 0, 1]],
        ]
    )


def uniform_law(values: dict, T_range=(250.0, 900.0), plane="strain") -> MaterialLaw:
    """Single-material law applied to both phases (degeneracy testing)."""
    coeffs = {MATRIX: dict(values), INCLUSION: dict(values)}
    return MaterialLaw(coeffs=coeffs, T_range=T_range, plane=plane)
