"""Effective (homogenized) coefficients and the representative-temperature table.

Coefficients are cell averages of the phase coefficients corrected by
first-order corrector gradients.  The table stores, per representative
temperature, the first- and second-order corrector sets and the coefficient
block, and answers interpolation queries from the on-line stage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import cell, fem


class HomogError(RuntimeError):
    pass


@dataclass
class HomogenizedCoefficients:
    """Effective coefficients at one temperature (unit cell volume = 1)."""

    T0: float
    S_hat: float
    k_hat: np.ndarray          # (2,2)
    lam_hat: np.ndarray        # (2,2)
    lam_hat_star: np.ndarray   # (2,2)
    rho_hat: float
    c_hat: np.ndarray          # (2,2,2,2)
    beta_hat: np.ndarray       # (2,2)
    beta_hat_star: np.ndarray  # (2,2)

    def as_row(self):
        return np.concatenate(
            [
                [self.T0, self.S_hat, self.rho_hat],
                self.k_hat.ravel(),
                self.lam_hat.ravel(),
                self.lam_hat_star.ravel(),
                self.beta_hat.ravel(),
                self.beta_hat_star.ravel(),
                self.c_hat.ravel(),
            ]
        )


CSV_HEADER = (
    ["T0", "S_hat", "rho_hat"]
    + [f"k_hat_{i}{j}" for i in (1, 2) for j in (1, 2)]
    + [f"lam_hat_{i}{j}" for i in (1, 2) for j in (1, 2)]
    + [f"lam_hat_star_{i}{j}" for i in (1, 2) for j in (1, 2)]
    + [f"beta_hat_{i}{j}" for i in (1, 2) for j in (1, 2)]
    + [f"beta_hat_star_{i}{j}" for i in (1, 2) for j in (1, 2)]
    + [f"c_hat_{i}{j}{k}{l}" for i in (1, 2) for j in (1, 2) for k in (1, 2) for l in (1, 2)]
)


def compute_coefficients(mesh, law, T0, first: cell.FirstOrderCellSet) -> HomogenizedCoefficients:
    """Cell-average the corrected coefficients (unit-cell measure is 1)."""
    if abs(first.T0 - T0) > 1e-9 * max(1.0, abs(T0)):
        raise HomogError(f"corrector set solved at {first.T0}, not {T0}")
    w = mesh.areas
    d2 = np.eye(2)

    k_e = cell.phase_scalar(mesh, law, "k", T0)
    lam_e = cell.phase_scalar(mesh, law, "lam", T0)
    beta_e = cell.phase_scalar(mesh, law, "beta", T0)
    rho_e = cell.phase_scalar(mesh, law, "rho", T0)
    cap_e = cell.phase_scalar(mesh, law, "c", T0)
    c_e = cell.phase_elasticity(mesh, law, T0)

    gM = fem.element_gradient(mesh, first.M)  # (j, nt, i)
    gH = fem.element_gradient(mesh, first.H)
    gN = fem.element_gradient(mesh, first.N)  # (m, sup, comp, nt, deriv)
    gP = fem.element_gradient(mesh, first.P)  # (k, nt, l)

    S_hat = float(np.sum(w * (rho_e * cap_e + T0 * beta_e * np.einsum("ktk->t", gP))))
    rho_hat = float(np.sum(w * rho_e))

    # conduction-type tensors: k_ij = k delta_ij + k dM_j/dy_i
    k_hat = np.einsum("t,ij->ij", w * k_e, d2) + np.einsum("t,jti->ij", w * k_e, gM)
    lam_hat = np.einsum("t,ij->ij", w * lam_e, d2) + np.einsum("t,jti->ij", w * lam_e, gH)
    lam_hat_star = (
        np.einsum("t,ij->ij", w * lam_e, d2)
        + np.einsum("t,jti->ij", w * lam_e, gH)
        + np.einsum("t,itj->ij", w * lam_e, gH)
        + np.einsum("t,ita,jta->ij", w * lam_e, gH, gH)
    )

    # c_hat_ijkl = <c_ijkl + c_ij a1 a2 dN^l_{a1 k}/dy_a2>; the corrector with
    # lower indices (a1, k) and superscript l is stored as gN[k, l, a1, t, a2]
    c_hat = np.einsum("t,tijkl->ijkl", w, c_e) + np.einsum(
        "tijab,klatb->ijkl", w[:, None, None, None, None] * c_e, gN
    )

    beta_hat = np.einsum("t,ij->ij", w * beta_e, d2) - np.einsum(
        "tijkl,ktl->ij", w[:, None, None, None, None] * c_e, gP
    )
    # beta*_ij = <beta delta_ij + beta_a1a2 dN^j_{a1 i}/dy_a2> with isotropic beta
    beta_hat_star = np.einsum("t,ij->ij", w * beta_e, d2) + np.einsum(
        "t,ijata->ij", w * beta_e, gN
    )

    return HomogenizedCoefficients(
        T0=float(T0),
        S_hat=S_hat,
        k_hat=k_hat,
        lam_hat=lam_hat,
        lam_hat_star=lam_hat_star,
        rho_hat=rho_hat,
        c_hat=c_hat,
        beta_hat=beta_hat,
        beta_hat_star=beta_hat_star,
    )


def verify_identities(h: HomogenizedCoefficients, law=None, tol: float = 1e-8) -> dict:
    """Structural checks: dual-form identities, symmetry, eigenvalue bounds."""
    rep = {"T0": h.T0, "checks": {}}

    def rel(a, b):
        na = np.linalg.norm(a)
        return float(np.linalg.norm(a - b) / max(na, 1e-300))

    rep["checks"]["lam_eq_lam_star"] = {
        "deviation": rel(h.lam_hat, h.lam_hat_star),
        "pass": rel(h.lam_hat, h.lam_hat_star) <= tol,
    }
    rep["checks"]["beta_eq_beta_star"] = {
        "deviation": rel(h.beta_hat, h.beta_hat_star),
        "pass": rel(h.beta_hat, h.beta_hat_star) <= tol,
    }
    for name, t in (("k_hat", h.k_hat), ("lam_hat", h.lam_hat), ("beta_hat", h.beta_hat)):
        sym = rel(t, t.T)
        ev = np.linalg.eigvalsh(0.5 * (t + t.T))
        entry = {"symmetry_deviation": sym, "eigenvalues": ev.tolist(), "pass": sym <= tol and ev.min() > 0}
        if law is not None:
            q = {"k_hat": "k", "lam_hat": "lam", "beta_hat": "beta"}[name]
            vals = [float(law.eval(ph, q, h.T0)) for ph in law.phases]
            lo, hi = min(vals), max(vals)
            slack = 1e-6 * max(abs(lo), abs(hi))
            entry["phase_bounds"] = [lo, hi]
            entry["pass"] = entry["pass"] and (ev.min() >= lo - slack) and (ev.max() <= hi + slack)
        rep["checks"][name] = entry

    cm = _c_voigt(h.c_hat)
    ev = np.linalg.eigvalsh(0.5 * (cm + cm.T))
    full_sym = max(
        float(np.abs(h.c_hat - np.transpose(h.c_hat, (1, 0, 2, 3))).max()),
        float(np.abs(h.c_hat - np.transpose(h.c_hat, (2, 3, 0, 1))).max()),
    ) / max(float(np.abs(h.c_hat).max()), 1e-300)
    rep["checks"]["c_hat"] = {
        "symmetry_deviation": full_sym,
        "eigenvalues": ev.tolist(),
        "pass": full_sym <= tol and ev.min() > 0,
    }
    rep["checks"]["S_hat"] = {"value": h.S_hat, "pass": h.S_hat > 0}
    rep["pass"] = all(c["pass"] for c in rep["checks"].values())
    return rep


def _c_voigt(c):
    s2 = np.sqrt(2.0)
    return np.array(
        [
            [c[0, 0, 0, 0], c[0, 0, 1, 1], c[0, 0, 0, 1] * s2],
            [c[1, 1, 0, 0], c[1, 1, 1, 1], c[1, 1, 0, 1] * s2],
            [c[0, 1, 0, 0] * s2, c[0, 1, 1, 1] * s2, 2 * c[0, 1, 0, 1]],
        ]
    )


# ---------------------------------------------------------------------------
# temperature table
# ---------------------------------------------------------------------------


@dataclass
class TemperatureTable:
    """Equidistant representative temperatures with correctors + coefficients."""

    temps: np.ndarray
    first: list
    second: list
    coeffs: list
    Ttilde: float
    bc: str = "dirichlet"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.temps, float)
        if len(t) < 2 or np.any(np.diff(t) <= 0):
            raise HomogError("table needs >= 2 strictly increasing temperatures")
        sp = np.diff(t)
        if np.max(np.abs(sp - sp[0])) > 1e-9 * sp[0]:
            raise HomogError("table temperatures must be equidistant")

    def _locate(self, T0):
        t = self.temps
        if T0 < t[0] or T0 > t[-1]:
            warnings.warn(f"temperature {T0} outside table range [{t[0]}, {t[-1]}]; clamped")
            T0 = float(np.clip(T0, t[0], t[-1]))
        i = int(np.clip(np.searchsorted(t, T0) - 1, 0, len(t) - 2))
        s = (T0 - t[i]) / (t[i + 1] - t[i])
        return i, float(np.clip(s, 0.0, 1.0))

    def coeffs_at(self, T0) -> HomogenizedCoefficients:
        """Piecewise-linear interpolation of the coefficient block."""
        i, s = self._locate(float(T0))
        a, b = self.coeffs[i], self.coeffs[i + 1]
        mix = lambda u, v: (1 - s) * np.asarray(u) + s * np.asarray(v)
        return HomogenizedCoefficients(
            T0=float(T0),
            S_hat=float(mix(a.S_hat, b.S_hat)),
            k_hat=mix(a.k_hat, b.k_hat),
            lam_hat=mix(a.lam_hat, b.lam_hat),
            lam_hat_star=mix(a.lam_hat_star, b.lam_hat_star),
            rho_hat=float(mix(a.rho_hat, b.rho_hat)),
            c_hat=mix(a.c_hat, b.c_hat),
            beta_hat=mix(a.beta_hat, b.beta_hat),
            beta_hat_star=mix(a.beta_hat_star, b.beta_hat_star),
        )

    def coeff_fields(self, T_nodes) -> dict:
        """Vectorized interpolation for per-node temperatures.

        Returns arrays with the tensor axes leading and the node axis last,
        e.g. k_hat -> (2, 2, n).  Out-of-range temperatures are clamped.
        """
        T = np.clip(np.asarray(T_nodes, float), self.temps[0], self.temps[-1])
        out = {}
        stacks = {
            "S_hat": np.array([c.S_hat for c in self.coeffs]),
            "rho_hat": np.array([c.rho_hat for c in self.coeffs]),
            "k_hat": np.stack([c.k_hat for c in self.coeffs], axis=-1),
            "lam_hat": np.stack([c.lam_hat for c in self.coeffs], axis=-1),
            "lam_hat_star": np.stack([c.lam_hat_star for c in self.coeffs], axis=-1),
            "beta_hat": np.stack([c.beta_hat for c in self.coeffs], axis=-1),
            "beta_hat_star": np.stack([c.beta_hat_star for c in self.coeffs], axis=-1),
            "c_hat": np.stack([c.c_hat for c in self.coeffs], axis=-1),
        }
        for name, tab in stacks.items():
            if tab.ndim == 1:
                out[name] = np.interp(T, self.temps, tab)
            else:
                flat = tab.reshape(-1, len(self.temps))
                vals = np.empty(flat.shape[:1] + T.shape)
                for r in range(flat.shape[0]):
                    vals[r] = np.interp(T, self.temps, flat[r])
                out[name] = vals.reshape(tab.shape[:-1] + T.shape)
        return out

    def cells_at(self, T0):
        """Linearly interpolated (first, second) corrector sets at T0."""
        i, s = self._locate(float(T0))
        fa, fb = self.first[i], self.first[i + 1]
        first = cell.FirstOrderCellSet(
            T0=float(T0),
            **{n: (1 - s) * getattr(fa, n) + s * getattr(fb, n) for n in ("M", "H", "N", "P")},
        )
        sa, sb = self.second[i], self.second[i + 1]
        fields = {k: (1 - s) * sa.fields[k] + s * sb.fields[k] for k in sa.fields}
        second = cell.SecondOrderCellSet(T0=float(T0), Ttilde=sa.Ttilde, fields=fields)
        return first, second

    def coeff_dT(self, index: int):
        """Finite-difference d/dT0 of the coefficient block at a table node."""
        lo = max(index - 1, 0)
        hi = min(index + 1, len(self.temps) - 1)
        dT = self.temps[hi] - self.temps[lo]
        a, b = self.coeffs[lo], self.coeffs[hi]

        class _D:
            pass

        d = _D()
        for name in ("S_hat", "k_hat", "lam_hat", "lam_hat_star", "rho_hat",
                     "c_hat", "beta_hat", "beta_hat_star"):
            setattr(d, name, (np.asarray(getattr(b, name)) - np.asarray(getattr(a, name))) / dT)
        return d


def build_table(
    mesh,
    law,
    Tmin: float,
    Tmax: float,
    count: int,
    Ttilde: float,
    bc: str = "dirichlet",
    with_second_order: bool = True,
    progress=None,
) -> TemperatureTable:
    """Off-line stage: correctors and coefficients at equidistant temperatures.

    progress, if given, is called as progress(T0, seconds) with the wall time
    attributable to each representative temperature.
    """
    import time as _time

    if count < 2:
        raise HomogError("table count must be >= 2")
    temps = np.linspace(Tmin, Tmax, count)
    elapsed = np.zeros(count)
    first = []
    for i, T in enumerate(temps):
        t0 = _time.perf_counter()
        first.append(cell.solve_first_order(mesh, law, T, bc=bc))
        elapsed[i] += _time.perf_counter() - t0
    coeffs = [compute_coefficients(mesh, law, T, f) for T, f in zip(temps, first)]
    table = TemperatureTable(temps=temps, first=first, second=[], coeffs=coeffs,
                             Ttilde=Ttilde, bc=bc)
    if with_second_order:
        for i, T in enumerate(temps):
            t0 = _time.perf_counter()
            f_dT = cell.dT_of_first_order(first, T)
            h_dT = table.coeff_dT(i)
            table.second.append(
                cell.solve_second_order(
                    mesh, law, T, first[i], coeffs[i], Ttilde,
                    first_dT=f_dT, homog_dT=h_dT, bc=bc,
                )
            )
            elapsed[i] += _time.perf_counter() - t0
    if progress is not None:
        for T, dt in zip(temps, elapsed):
            progress(float(T), float(dt))
    return table


def export_csv(table: TemperatureTable, path) -> None:
    rows = np.array([c.as_row() for c in table.coeffs])
    np.savetxt(path, rows, delimiter=",", header=",".join(CSV_HEADER), comments="")
