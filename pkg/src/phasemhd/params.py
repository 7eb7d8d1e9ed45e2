"""Physical parameters, dimensionless groups and material-property laws."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class InvalidParameterError(ValueError):
    """Raised when a physical or reference quantity violates its invariants."""


class InvalidValueError(ValueError):
    """Raised when a field value is not finite where finiteness is required."""


@dataclass(frozen=True)
class PhysicalParams:
    """Dimensional inputs of the two-phase MHD model (SI units).

    ``u_ref`` defaults to ``sqrt(g * L_ref)``; the reference density,
    viscosity and conductivity default to the plus-phase values and the
    reference field strength to ``|B_vec|``.
    """

    rho_plus: float = 1000.0
    rho_minus: float = 1.0
    eta_plus: float = 10.0
    eta_minus: float = 0.1
    sigma_plus: float = 1000.0
    sigma_minus: float = 1.0
    surface_tension: float = 1.96
    g: float = 0.98
    epsilon: float = 0.005
    L_ref: float = 1.0
    u_ref: float | None = None
    B_vec: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rho_ref: float | None = None
    eta_ref: float | None = None
    sigma_ref: float | None = None
    B_ref: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "B_vec", tuple(float(b) for b in self.B_vec))
        if len(self.B_vec) != 3:
            raise InvalidParameterError("B_vec must have three components")
        for name in ("rho_plus", "rho_minus", "eta_plus", "eta_minus",
                     "sigma_plus", "sigma_minus", "surface_tension",
                     "epsilon", "L_ref"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be positive, got {value!r}")
        if not (math.isfinite(self.g) and self.g >= 0):
            raise InvalidParameterError(f"g must be non-negative, got {self.g!r}")
        for name in ("u_ref", "rho_ref", "eta_ref", "sigma_ref"):
            value = getattr(self, name)
            if value is not None and not (math.isfinite(value) and value > 0):
                raise InvalidParameterError(f"{name} must be positive, got {value!r}")
        if self.B_ref is not None and not (math.isfinite(self.B_ref) and self.B_ref >= 0):
            raise InvalidParameterError(f"B_ref must be non-negative, got {self.B_ref!r}")
        if self.reference_velocity <= 0:
            raise InvalidParameterError(
                "u_ref must be given explicitly when g * L_ref is zero")

    @property
    def reference_velocity(self) -> float:
        if self.u_ref is not None:
            return self.u_ref
        return math.sqrt(self.g * self.L_ref)

    @property
    def reference_density(self) -> float:
        return self.rho_plus if self.rho_ref is None else self.rho_ref

    @property
    def reference_viscosity(self) -> float:
        return self.eta_plus if self.eta_ref is None else self.eta_ref

    @property
    def reference_conductivity(self) -> float:
        return self.sigma_plus if self.sigma_ref is None else self.sigma_ref

    @property
    def reference_field(self) -> float:
        if self.B_ref is not None:
            return self.B_ref
        return float(np.linalg.norm(self.B_vec))


@dataclass(frozen=True)
class DimensionlessGroups:
    """The six dimensionless numbers plus the derived scales used by the scheme.

    ``Fr`` is ``math.inf`` when gravity is switched off; use
    :attr:`inv_Fr` in formulas so that the gravity term vanishes cleanly.
    """

    Cn: float
    Pe: float
    Re: float
    We: float
    N: float
    Fr: float
    lambda_hat: float
    drho_dphi: float
    # dimensionless unit field direction (zero when there is no field)
    B_hat: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # property ratios phase/reference, ordered (plus, minus)
    rho: tuple[float, float] = (1.0, 1.0)
    eta: tuple[float, float] = (1.0, 1.0)
    sigma: tuple[float, float] = (1.0, 1.0)
    scales: dict = field(default_factory=dict, compare=False)

    @property
    def inv_Pe(self) -> float:
        return 1.0 / self.Pe

    @property
    def inv_Fr(self) -> float:
        return 0.0 if math.isinf(self.Fr) else 1.0 / self.Fr

    @property
    def gravity_enabled(self) -> bool:
        return not math.isinf(self.Fr)

    @property
    def magnetic_enabled(self) -> bool:
        return self.N > 0 and any(b != 0.0 for b in self.B_hat)


def derive_groups(p: PhysicalParams, scaling_law: bool = True,
                  Pe: float | None = None) -> DimensionlessGroups:
    """Non-dimensionalize ``p``.

    With ``scaling_law`` (the default) the Peclet number follows the mobility
    scaling ``1/Pe = 3 Cn``; otherwise ``Pe`` must be supplied.
    """
    L = p.L_ref
    u = p.reference_velocity
    rho_r = p.reference_density
    eta_r = p.reference_viscosity
    sigma_r = p.reference_conductivity
    B_r = p.reference_field

    Cn = p.epsilon / L
    if scaling_law:
        Pe_value = 1.0 / (3.0 * Cn)
    else:
        if Pe is None or not Pe > 0:
            raise InvalidParameterError("Pe must be positive when the scaling law is disabled")
        Pe_value = float(Pe)
    lambda_hat = 3.0 * p.surface_tension / (2.0 * math.sqrt(2.0))
    Re = L * rho_r * u / eta_r
    We = L * rho_r * u * u / lambda_hat
    N = L * sigma_r * B_r * B_r / (rho_r * u)
    if p.g == 0:
        Fr = math.inf
    elif p.u_ref is None:
        Fr = 1.0    # u_ref = sqrt(g L) by construction
    else:
        Fr = u * u / (p.g * L)
    B_norm = float(np.linalg.norm(p.B_vec))
    if B_r == 0 or B_norm == 0:
        N = 0.0
        B_hat = (0.0, 0.0, 0.0)
    else:
        B_hat = tuple(b / B_r for b in p.B_vec)
    return DimensionlessGroups(
        Cn=Cn, Pe=Pe_value, Re=Re, We=We, N=N, Fr=Fr,
        lambda_hat=lambda_hat,
        drho_dphi=(p.rho_plus - p.rho_minus) / (2.0 * rho_r),
        B_hat=B_hat,
        rho=(p.rho_plus / rho_r, p.rho_minus / rho_r),
        eta=(p.eta_plus / eta_r, p.eta_minus / eta_r),
        sigma=(p.sigma_plus / sigma_r, p.sigma_minus / sigma_r),
        scales={"L": L, "u": u, "t": L / u, "rho": rho_r, "eta": eta_r,
                "sigma": sigma_r, "B": B_r},
    )


def cutoff(phi):
    """Clamp the order parameter to [-1, 1]; works on scalars and arrays."""
    arr = np.asarray(phi, dtype=float)
    if np.isnan(arr).any():
        raise InvalidValueError("cut-off applied to NaN")
    out = np.clip(arr, -1.0, 1.0)
    return float(out) if out.ndim == 0 else out


def interpolate_property(phi, plus: float, minus: float, ref: float):
    """Affine-in-phase material law evaluated on the cut-off order parameter."""
    if not ref > 0:
        raise InvalidParameterError(f"reference value must be positive, got {ref!r}")
    slope = (plus - minus) / (2.0 * ref)
    mean = (plus + minus) / (2.0 * ref)
    c = cutoff(phi)
    # pure phases must come out exactly, not up to rounding of slope + mean
    out = np.where(c == 1.0, plus / ref, np.where(c == -1.0, minus / ref, slope * c + mean))
    return float(out) if out.ndim == 0 else out
