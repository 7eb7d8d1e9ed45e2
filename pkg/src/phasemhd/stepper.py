"""Decoupled, linear BDF-1/BDF-2 time stepping for the phase-field MHD model.

One time step runs four linear solves in sequence:

1. Cahn-Hilliard pair (phi, mu) with extrapolated advection and a stabilized
   linearization of the double-well derivative;
2. momentum for u with all coupling terms lagged or extrapolated;
3. pressure increment (Poisson, pure Neumann) driven by div u;
4. electric potential V (pure Neumann) and the current J.

In 2D with the field in the plane of motion, u x B points out of the plane,
the potential solve returns V = 0 and step 4 reduces to the closed form
J = sigma u x B (see :func:`lorentz_2d`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import fem
from .linsolve import SolveReport, SolveSpec, project_zero_mean, solve
from .mesh import StructuredMesh
from .params import DimensionlessGroups, interpolate_property

MAGNETIC_MODES = ("auto", "off", "in-plane", "out-of-plane", "full-3d")

DEFAULT_SOLVERS = {
    "ch": SolveSpec(method="gmres", rtol=1e-12, atol=1e-15, preconditioner="ilu", maxiter=3000),
    "mom": SolveSpec(method="cg", rtol=1e-7, preconditioner="jacobi", maxiter=3000),
    "p": SolveSpec(method="cg", rtol=1e-8, preconditioner="ilu", zero_mean=True,
                   maxiter=5000),
    "v": SolveSpec(method="cg", rtol=1e-8, preconditioner="jacobi", zero_mean=True,
                   maxiter=5000),
}


class OrderFallback(Exception):
    """Not enough history for the requested BDF order; use BDF-1 instead."""


class StepFailure(RuntimeError):
    def __init__(self, step: str, report: SolveReport):
        super().__init__(f"{step} solve did not converge: {report.iterations} iterations, "
                         f"residual {report.residual:.3e}")
        self.step = step
        self.report = report


class ModeError(ValueError):
    pass


@dataclass(frozen=True)
class SchemeConstants:
    tau: float
    order: int = 2
    zeta: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("time step must be positive")
        if self.order not in (1, 2):
            raise ValueError("BDF order must be 1 or 2")
        if not self.zeta > 0:
            raise ValueError("stabilization constant must be positive")

    @staticmethod
    def gamma0(k: int) -> float:
        return 1.0 if k == 1 else 1.5


@dataclass(frozen=True)
class BDFTerms:
    """``delta = coeff * chi_new - known``."""

    coeff: float
    known: np.ndarray
    order: int


def bdf_delta(history, k: int, tau: float) -> BDFTerms:
    """Split the BDF-k difference quotient into implicit and known parts.

    ``history`` holds the newest level first: ``[chi_n, chi_{n-1}, ...]``.
    """
    if len(history) < k or any(h is None for h in history[:k]):
        raise OrderFallback(f"BDF-{k} needs {k} history levels")
    if k == 1:
        hat = np.asarray(history[0], dtype=float)
        g0 = 1.0
    elif k == 2:
        hat = 2.0 * np.asarray(history[0], dtype=float) - 0.5 * np.asarray(history[1], dtype=float)
        g0 = 1.5
    else:
        raise ValueError("BDF order must be 1 or 2")
    return BDFTerms(g0 / tau, hat / tau, k)


def extrapolate(history, k: int) -> np.ndarray:
    if len(history) < k or any(h is None for h in history[:k]):
        raise OrderFallback(f"order-{k} extrapolation needs {k} history levels")
    if k == 1:
        return np.array(history[0], dtype=float, copy=True)
    return 2.0 * np.asarray(history[0], dtype=float) - np.asarray(history[1], dtype=float)


def initial_phi(mesh: StructuredMesh, center, radius: float, Cn: float) -> np.ndarray:
    """Equilibrium-shaped bubble: negative inside, +1 far away."""
    if not (radius > 0 and Cn > 0):
        raise ValueError("radius and Cn must be positive")
    c = np.asarray(center, dtype=float)[: mesh.dim]
    dist = np.linalg.norm(mesh.coordinates - c[None, :], axis=1)
    return np.tanh((dist - radius) / (math.sqrt(2.0) * Cn))


def planar_phi(mesh: StructuredMesh, axis: int, offset: float, Cn: float,
               width: float = 1.0) -> np.ndarray:
    """Flat interface normal to ``axis``; ``width`` stretches the tanh layer."""
    x = mesh.coordinates[:, axis] - offset
    return np.tanh(x / (math.sqrt(2.0) * Cn * width))


def cross3(a: np.ndarray, b) -> np.ndarray:
    """Row-wise cross product, padding 2-vectors with a zero third component."""
    a = np.asarray(a, dtype=float)
    if a.shape[-1] == 2:
        a = np.concatenate([a, np.zeros(a.shape[:-1] + (1,))], axis=-1)
    return np.cross(a, np.broadcast_to(np.asarray(b, dtype=float), a.shape))


def lorentz_2d(u, B_inplane, sigma, N: float = 1.0) -> np.ndarray:
    """Lorentz force ``N sigma (u x B) x B`` for planar flow and in-plane ``B``.

    ``u`` has shape ``(n, 2)`` (or ``(2,)``); ``B_inplane`` is ``(b1, b2)`` or
    ``(b1, b2, 0)``.  With ``c = u1 b2 - u2 b1`` the force is
    ``N sigma c (-b2, b1)``, which always opposes the velocity component
    normal to the field.
    """
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != 2:
        raise ModeError("lorentz_2d is only defined for two-dimensional flow")
    B = np.asarray(B_inplane, dtype=float)
    if B.size == 3:
        if B[2] != 0.0:
            raise ModeError("lorentz_2d needs an in-plane field")
        B = B[:2]
    c = u[..., 0] * B[1] - u[..., 1] * B[0]
    s = N * np.asarray(sigma, dtype=float) * c
    return np.stack([-s * B[1], s * B[0]], axis=-1)


@dataclass
class SimState:
    """Time levels needed by the two-step scheme.

    Vector fields are nodal arrays of shape ``(n_nodes, ncomp)``; the current
    always carries three components.
    """

    n: int
    t: float
    phi: np.ndarray
    mu: np.ndarray
    u: np.ndarray
    p: np.ndarray
    V: np.ndarray
    J: np.ndarray
    phi_prev: np.ndarray | None = None
    u_prev: np.ndarray | None = None
    p_prev: np.ndarray | None = None
    J_prev: np.ndarray | None = None
    order: int = 1
    mass0: float = 0.0
    iterations: dict = field(default_factory=lambda: {"ch": 0, "mom": 0, "p": 0, "v": 0})

    FIELDS = ("phi", "mu", "u", "p", "V", "J", "phi_prev", "u_prev", "p_prev", "J_prev")

    def copy(self) -> "SimState":
        kw = {name: (None if getattr(self, name) is None else getattr(self, name).copy())
              for name in self.FIELDS}
        return replace(self, iterations=dict(self.iterations), **kw)


class Stepper:
    """Owns the discretization of one run and advances :class:`SimState`."""

    def __init__(self, mesh: StructuredMesh, groups: DimensionlessGroups, tau: float,
                 order: int = 2, solvers: dict | None = None, magnetic_mode: str = "auto"):
        self.mesh = mesh
        self.groups = groups
        self.consts = SchemeConstants(tau=tau, order=order, zeta=min(groups.rho))
        self.solvers = dict(DEFAULT_SOLVERS)
        if solvers:
            self.solvers.update(solvers)
        self.asm = fem.get_assembler(mesh)
        self.dim = mesh.dim
        self.M = fem.assemble_mass(mesh).matrix
        self.K = fem.assemble_stiffness(mesh).matrix
        self.K_op = fem.SparseOperator(self.K, symmetric=True, zero_mean=True)
        self.M_op = fem.SparseOperator(self.M, symmetric=True)
        self.Bdiv = fem.assemble_divergence(mesh).matrix
        self.weights = self.asm.lumped_mass()
        self.vel_dofs = fem.velocity_boundary_dofs(mesh)
        self.B = np.asarray(groups.B_hat, dtype=float)
        self.mode = self._resolve_mode(magnetic_mode)
        self._ch_cache: dict[float, fem.SparseOperator] = {}

    # -- setup ----------------------------------------------------------------
    def _resolve_mode(self, mode: str) -> str:
        if mode not in MAGNETIC_MODES:
            raise ModeError(f"unknown magnetic mode {mode!r}")
        if mode == "off" or not self.groups.magnetic_enabled:
            return "off"
        inplane = self.B[2] == 0.0
        normal = self.B[0] == 0.0 and self.B[1] == 0.0
        if self.dim == 3:
            if mode not in ("auto", "full-3d"):
                raise ModeError(f"mode {mode!r} needs a 2D mesh")
            return "full-3d"
        if mode == "full-3d":
            raise ModeError("full-3d mode needs a 3D mesh")
        if mode == "in-plane" and not inplane:
            raise ModeError("in-plane mode needs B with zero out-of-plane component")
        if mode == "out-of-plane" and not normal:
            raise ModeError("out-of-plane mode needs B normal to the plane")
        if mode == "auto":
            return "in-plane" if inplane else "out-of-plane"
        return mode

    def initial_state(self, phi0: np.ndarray) -> SimState:
        n = self.mesh.n_nodes
        phi0 = np.asarray(phi0, dtype=float).copy()
        return SimState(
            n=0, t=0.0, phi=phi0, mu=self.chemical_potential(phi0), u=np.zeros((n, self.dim)),
            p=np.zeros(n), V=np.zeros(n), J=np.zeros((n, 3)),
            order=1, mass0=self.asm.integrate(self.asm.at_quad(phi0)),
        )

    def chemical_potential(self, phi) -> np.ndarray:
        """L2 projection of ``phi^3 - phi - Cn^2 lap(phi)`` onto the nodal space."""
        pq = self.asm.at_quad(phi)
        rhs = self.groups.Cn ** 2 * (self.K @ phi) + self.asm.load(pq ** 3 - pq)
        mu, report = solve(self.M_op, rhs, None,
                           SolveSpec(method="cg", rtol=1e-12, preconditioner="jacobi"))
        self._check("chemical potential", report)
        return mu

    def properties(self, phi):
        g = self.groups
        rho = interpolate_property(phi, g.rho[0], g.rho[1], 1.0)
        eta = interpolate_property(phi, g.eta[0], g.eta[1], 1.0)
        sigma = interpolate_property(phi, g.sigma[0], g.sigma[1], 1.0)
        return rho, eta, sigma

    def active_order(self, state: SimState) -> int:
        try:
            bdf_delta([state.phi, state.phi_prev], self.consts.order, self.consts.tau)
        except OrderFallback:
            return 1
        return self.consts.order

    def _check(self, step, report):
        if not report.converged:
            raise StepFailure(step, report)

    def ch_operator(self, k: int) -> fem.SparseOperator:
        g0 = SchemeConstants.gamma0(k)
        if g0 not in self._ch_cache:
            g = self.groups
            tau = self.consts.tau
            M, K = self.M, self.K
            A = sp.bmat([[(g0 / tau) * M, g.inv_Pe * K],
                         [-(g.Cn ** 2) * K - M, M]], format="csr")
            A.sort_indices()
            self._ch_cache[g0] = fem.SparseOperator(A)
        return self._ch_cache[g0]

    # -- step 1 ---------------------------------------------------------------
    def step_cahn_hilliard(self, state: SimState, k: int | None = None):
        """Return ``(phi_new, mu_new, report)``."""
        k = self.active_order(state) if k is None else k
        tau = self.consts.tau
        asm = self.asm
        bdf = bdf_delta([state.phi, state.phi_prev], k, tau)
        phi_t = extrapolate([state.phi, state.phi_prev], k)
        u_t = extrapolate([state.u, state.u_prev], k)
        phi_q = asm.at_quad(phi_t)
        flux_q = phi_q[:, :, None] * asm.at_quad(u_t)
        rhs_phi = self.M @ bdf.known + asm.load_grad(flux_q)
        rhs_mu = asm.load(phi_q ** 3 - 2.0 * phi_q)
        rhs = np.concatenate([rhs_phi, rhs_mu])
        x0 = np.concatenate([phi_t, state.mu])
        x, report = solve(self.ch_operator(k), rhs, x0, self.solvers["ch"])
        self._check("cahn-hilliard", report)
        n = self.mesh.n_nodes
        return x[:n], x[n:], report

    # -- step 2 ---------------------------------------------------------------
    def momentum_rhs_forces(self, state: SimState, k: int, phi, mu, rho):
        """Explicit right-hand side of the momentum step, excluding the BDF term."""
        g = self.groups
        asm = self.asm
        dim, n = self.dim, self.mesh.n_nodes
        u_t = extrapolate([state.u, state.u_prev], k)
        p_t = extrapolate([state.p, state.p_prev], k)
        conv = fem.assemble_convection(self.mesh, None, rho, u_t, mu=mu,
                                       flux_coeff=g.drho_dphi * g.inv_Pe)
        rhs = -(conv @ u_t.T.ravel())
        rhs += self.Bdiv.T @ p_t
        cap = asm.at_quad(mu)[:, :, None] * asm.grad_at_quad(phi)
        cap_load = np.concatenate([asm.load(cap[:, :, a]) for a in range(dim)])
        rhs += cap_load / (g.We * g.Cn)
        if self.mode != "off":
            J_t = extrapolate([state.J, state.J_prev], k)
            JxB = cross3(J_t, self.B)
            rhs += g.N * np.concatenate([self.M @ JxB[:, a] for a in range(dim)])
        if g.gravity_enabled:
            rhs[(dim - 1) * n:] -= g.inv_Fr * (self.M @ rho)
        return rhs

    def step_momentum(self, state: SimState, phi, mu, k: int | None = None):
        """Return ``(u_new, report)`` given the new phase field and potential."""
        k = self.active_order(state) if k is None else k
        g = self.groups
        tau = self.consts.tau
        dim, n = self.dim, self.mesh.n_nodes
        rho, eta, _ = self.properties(phi)
        bdf = bdf_delta([state.u, state.u_prev], k, tau)
        Mrho = fem.assemble_mass(self.mesh, None, rho).matrix
        Mrho_vec = sp.block_diag([Mrho] * dim, format="csr")
        visc = fem.assemble_viscous(self.mesh, eta).matrix
        A = bdf.coeff * Mrho_vec + (2.0 / g.Re) * visc
        rhs = Mrho_vec @ bdf.known.T.ravel()
        rhs += self.momentum_rhs_forces(state, k, phi, mu, rho)
        op, rhs = fem.apply_dirichlet(fem.SparseOperator(A.tocsr(), symmetric=True),
                                      rhs, self.vel_dofs, 0.0)
        x0 = extrapolate([state.u, state.u_prev], k).T.ravel().copy()
        x0[self.vel_dofs] = 0.0
        x, report = solve(op, rhs, x0, self.solvers["mom"])
        self._check("momentum", report)
        return x.reshape(dim, n).T.copy(), report

    # -- step 3 ---------------------------------------------------------------
    def step_pressure(self, state: SimState, u_new, k: int | None = None):
        """Return ``(p_new, report)``; the increment solves a Neumann Poisson problem."""
        k = self.active_order(state) if k is None else k
        g0 = SchemeConstants.gamma0(k)
        rhs = -(g0 * self.consts.zeta / self.consts.tau) * (self.Bdiv @ u_new.T.ravel())
        delta, report = solve(self.K_op, rhs, None, self.solvers["p"], weights=self.weights)
        self._check("pressure", report)
        return project_zero_mean(state.p + delta, self.weights), report

    # -- step 4 ---------------------------------------------------------------
    def current_at_quad(self, u, sigma, V) -> np.ndarray:
        """``sigma (-grad V + u x B)`` at quadrature points, shape ``(nc, nq, 3)``."""
        asm = self.asm
        uxB = asm.at_quad(cross3(u, self.B))
        gradV = asm.grad_at_quad(V)
        if self.dim == 2:
            gradV = np.concatenate([gradV, np.zeros(gradV.shape[:-1] + (1,))], axis=-1)
        return asm.at_quad(sigma)[:, :, None] * (uxB - gradV)

    def step_potential(self, u, sigma):
        """Return ``(V, J, report)`` from the primal potential formulation."""
        asm = self.asm
        dim = self.dim
        sigma_q = asm.at_quad(sigma)
        uxB_q = asm.at_quad(cross3(u, self.B))
        rhs = asm.load_grad(sigma_q[:, :, None] * uxB_q[:, :, :dim])
        Ks = fem.assemble_stiffness(self.mesh, None, sigma)
        V, report = solve(Ks, rhs, None, self.solvers["v"], weights=self.weights)
        self._check("potential", report)
        Jq = self.current_at_quad(u, sigma, V)
        J = np.zeros((self.mesh.n_nodes, 3))
        mass_spec = SolveSpec(method="cg", rtol=1e-12, preconditioner="jacobi")
        for c in range(3):
            J[:, c], rep = solve(self.M_op, asm.load(Jq[:, :, c]), None, mass_spec)
            self._check("current projection", rep)
        return V, J, report

    def electromagnetics(self, u, sigma):
        n = self.mesh.n_nodes
        if self.mode == "off":
            return np.zeros(n), np.zeros((n, 3)), SolveReport(0, 0.0, True)
        if self.mode == "in-plane":
            return np.zeros(n), sigma[:, None] * cross3(u, self.B), SolveReport(0, 0.0, True)
        return self.step_potential(u, sigma)

    # -- full step ------------------------------------------------------------
    def advance(self, state: SimState) -> SimState:
        k = self.active_order(state)
        phi, mu, r1 = self.step_cahn_hilliard(state, k)
        u, r2 = self.step_momentum(state, phi, mu, k)
        p, r3 = self.step_pressure(state, u, k)
        _, _, sigma = self.properties(phi)
        V, J, r4 = self.electromagnetics(u, sigma)
        return SimState(
            n=state.n + 1, t=(state.n + 1) * self.consts.tau,
            phi=phi, mu=mu, u=u, p=p, V=V, J=J,
            phi_prev=state.phi, u_prev=state.u, p_prev=state.p, J_prev=state.J,
            order=k, mass0=state.mass0,
            iterations={"ch": r1.iterations, "mom": r2.iterations,
                        "p": r3.iterations, "v": r4.iterations},
        )
