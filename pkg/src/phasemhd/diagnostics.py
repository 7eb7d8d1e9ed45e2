"""Scalar functionals of a simulation state.

Energies and dissipation rates are the dimensionless counterparts of the
phase-field energy law:

    d/dt [ int rho |u|^2 / 2  +  1/(We Cn) int (Cn^2 |grad phi|^2 / 2 + (phi^2 - 1)^2 / 4) ]
        = - 2/Re int eta |D(u)|^2 - 1/(We Cn Pe) int |grad mu|^2
          - N int |J|^2 / sigma - 1/Fr int rho u_vertical

All integrals use the 2-point Gauss rule on the Q1 interpolants.  Bubble
membership (phi < 0) is decided per quadrature point.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .fem import get_assembler
from .mesh import StructuredMesh
from .params import DimensionlessGroups, interpolate_property


class UndefinedRegionError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSeriesRecord:
    step: int
    time: float
    mass: float
    mass_drift: float
    kinetic: float
    free: float
    rise_velocity: float
    center_z: float
    visc_diss: float
    ohmic_diss: float
    ch_diss: float
    iters_ch: int
    iters_mom: int
    iters_p: int
    iters_v: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def values(self) -> list:
        return [getattr(self, name) for name in self.columns()]


def total_mass(phi, mesh: StructuredMesh) -> float:
    asm = get_assembler(mesh)
    return asm.integrate(asm.at_quad(phi))


def _props(state, groups):
    rho = interpolate_property(state.phi, groups.rho[0], groups.rho[1], 1.0)
    eta = interpolate_property(state.phi, groups.eta[0], groups.eta[1], 1.0)
    sigma = interpolate_property(state.phi, groups.sigma[0], groups.sigma[1], 1.0)
    return rho, eta, sigma


def kinetic_energy(u, rho, mesh: StructuredMesh) -> float:
    asm = get_assembler(mesh)
    uq = asm.at_quad(u)
    return 0.5 * asm.integrate(asm.at_quad(rho) * np.sum(uq * uq, axis=-1))


def free_energy(phi, groups: DimensionlessGroups, mesh: StructuredMesh) -> float:
    asm = get_assembler(mesh)
    pq = asm.at_quad(phi)
    gq = asm.grad_at_quad(phi)
    dens = 0.5 * groups.Cn ** 2 * np.sum(gq * gq, axis=-1) + 0.25 * (pq * pq - 1.0) ** 2
    return asm.integrate(dens) / (groups.We * groups.Cn)


def energies(state, groups: DimensionlessGroups, mesh: StructuredMesh) -> tuple[float, float]:
    """Return ``(kinetic, free)``."""
    rho, _, _ = _props(state, groups)
    return kinetic_energy(state.u, rho, mesh), free_energy(state.phi, groups, mesh)


def dissipation(state, groups: DimensionlessGroups, mesh: StructuredMesh) -> dict:
    """Viscous, Cahn-Hilliard and Ohmic dissipation rates plus gravity power."""
    asm = get_assembler(mesh)
    rho, eta, sigma = _props(state, groups)
    gu = asm.vector_grad_at_quad(state.u)                     # (nc, nq, comp, dim)
    D = 0.5 * (gu + np.swapaxes(gu, -1, -2))
    visc = 2.0 / groups.Re * asm.integrate(asm.at_quad(eta) * np.sum(D * D, axis=(-1, -2)))
    gm = asm.grad_at_quad(state.mu)
    ch = asm.integrate(np.sum(gm * gm, axis=-1)) / (groups.We * groups.Cn * groups.Pe)
    Jq = asm.at_quad(state.J)
    ohm = groups.N * asm.integrate(np.sum(Jq * Jq, axis=-1) / asm.at_quad(sigma))
    vertical = asm.at_quad(state.u[:, mesh.dim - 1])
    grav = -groups.inv_Fr * asm.integrate(asm.at_quad(rho) * vertical)
    return {"visc": visc, "ch": ch, "ohmic": ohm, "gravity_power": grav}


def _bubble_weights(state, mesh):
    asm = get_assembler(mesh)
    inside = asm.at_quad(state.phi) < 0.0
    w = inside * asm.w[None, :]
    vol = w.sum()
    if vol <= 0.0:
        raise UndefinedRegionError("no quadrature point has phi < 0")
    return asm, w, vol


def rise_velocity(state, mesh: StructuredMesh) -> float:
    """Mean vertical velocity over the bubble; the last axis is vertical."""
    asm, w, vol = _bubble_weights(state, mesh)
    return float(np.sum(w * asm.at_quad(state.u[:, mesh.dim - 1])) / vol)


def bubble_center(state, mesh: StructuredMesh) -> np.ndarray:
    asm, w, vol = _bubble_weights(state, mesh)
    xq = asm.at_quad(mesh.coordinates)
    return np.einsum("cq,cqd->d", w, xq) / vol


def kinetic_fractions(state, groups: DimensionlessGroups, mesh: StructuredMesh) -> np.ndarray:
    """Share of kinetic energy carried by each velocity component."""
    asm = get_assembler(mesh)
    rho, _, _ = _props(state, groups)
    uq = asm.at_quad(state.u)
    parts = np.array([asm.integrate(asm.at_quad(rho) * uq[..., a] ** 2)
                      for a in range(mesh.dim)])
    total = parts.sum()
    return parts / total if total > 0 else np.zeros(mesh.dim)


def field_alignment(state, groups: DimensionlessGroups, mesh: StructuredMesh, direction) -> float:
    """Fraction of kinetic energy in the velocity component along ``direction``."""
    asm = get_assembler(mesh)
    d = np.asarray(direction, dtype=float)[: mesh.dim]
    d = d / np.linalg.norm(d)
    rho, _, _ = _props(state, groups)
    uq = asm.at_quad(state.u)
    rq = asm.at_quad(rho)
    total = asm.integrate(rq * np.sum(uq * uq, axis=-1))
    if total == 0:
        return 0.0
    return asm.integrate(rq * (uq @ d) ** 2) / total


def record(state, groups: DimensionlessGroups, mesh: StructuredMesh) -> TimeSeriesRecord:
    mass = total_mass(state.phi, mesh)
    kin, free = energies(state, groups, mesh)
    diss = dissipation(state, groups, mesh)
    try:
        rv = rise_velocity(state, mesh)
        cz = float(bubble_center(state, mesh)[mesh.dim - 1])
    except UndefinedRegionError:
        rv, cz = float("nan"), float("nan")
    drift = 0.0 if state.n == 0 else mass - state.mass0
    it = state.iterations
    return TimeSeriesRecord(
        step=state.n, time=state.t, mass=mass, mass_drift=drift,
        kinetic=kin, free=free, rise_velocity=rv, center_z=cz,
        visc_diss=diss["visc"], ohmic_diss=diss["ohmic"], ch_diss=diss["ch"],
        iters_ch=it["ch"], iters_mom=it["mom"], iters_p=it["p"], iters_v=it["v"],
    )


def energy_residual(prev, new, groups: DimensionlessGroups, mesh: StructuredMesh, tau: float) -> float:
    """Discrete residual of the energy law over one step (trapezoidal rates)."""
    e0 = sum(energies(prev, groups, mesh))
    e1 = sum(energies(new, groups, mesh))
    d0 = dissipation(prev, groups, mesh)
    d1 = dissipation(new, groups, mesh)
    rate0 = d0["visc"] + d0["ch"] + d0["ohmic"] - d0["gravity_power"]
    rate1 = d1["visc"] + d1["ch"] + d1["ohmic"] - d1["gravity_power"]
    return (e1 - e0) / tau + 0.5 * (rate0 + rate1)
