import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phasemhd import diagnostics as diag
from phasemhd.mesh import build_mesh
from phasemhd.params import PhysicalParams, derive_groups
from phasemhd.stepper import SimState, initial_phi

from helpers import MATCHED


def state_of(mesh, phi, u=None, mu=None, J=None, n=0):
    nn = mesh.n_nodes
    return SimState(
        n=n, t=0.0, phi=np.asarray(phi, dtype=float) * np.ones(nn),
        mu=np.zeros(nn) if mu is None else mu,
        u=np.zeros((nn, mesh.dim)) if u is None else u,
        p=np.zeros(nn), V=np.zeros(nn), J=np.zeros((nn, 3)) if J is None else J)


GROUPS = derive_groups(PhysicalParams(**MATCHED, g=0.98))


def test_total_mass_examples():
    sq = build_mesh(2, ((0, 0), (1, 1)), 4)
    assert diag.total_mass(np.ones(sq.n_nodes), sq) == pytest.approx(1.0, rel=1e-15)
    box = build_mesh(2, ((0, 0), (1, 2)), (3, 5))
    assert diag.total_mass(-np.ones(box.n_nodes), box) == pytest.approx(-2.0, rel=1e-15)
    assert diag.total_mass(sq.coordinates[:, 0], sq) == pytest.approx(0.5, rel=1e-15)


def test_energies_of_pure_quiescent_phase_vanish():
    m = build_mesh(2, ((0, 0), (1, 1)), 4)
    kin, free = diag.energies(state_of(m, 1.0), GROUPS, m)
    assert kin == 0.0 and free == pytest.approx(0.0, abs=1e-25)


def test_kinetic_energy_of_uniform_flow():
    m = build_mesh(3, ((0, 0, 0), (1, 1, 1)), 3)
    c = 0.7
    u = np.tile([c, 0.0, 0.0], (m.n_nodes, 1))
    kin, free = diag.energies(state_of(m, 1.0, u=u), GROUPS, m)
    assert kin == pytest.approx(c * c / 2, rel=1e-14)


@pytest.mark.parametrize("Cn", [0.02, 0.01])
def test_planar_interface_free_energy(Cn):
    # strip of height H with h = Cn / 2; energy per unit interface length
    h = Cn / 2
    cells = int(round(1.0 / h))
    H = 2 * h
    m = build_mesh(2, ((-0.5, 0.0), (0.5, H)), (cells, 2))
    g = derive_groups(PhysicalParams(**MATCHED, g=0.0, u_ref=1.0, epsilon=Cn))
    phi = np.tanh(m.coordinates[:, 0] / (math.sqrt(2) * Cn))
    free = diag.free_energy(phi, g, m)
    expected = (1 / (g.We * g.Cn)) * (2 * math.sqrt(2) / 3) * g.Cn * H
    assert free == pytest.approx(expected, rel=0.02)


def test_rise_velocity_examples():
    m = build_mesh(3, ((0, 0, 0), (1, 1, 1)), 4)
    phi = initial_phi(m, (0.5, 0.5, 0.5), 0.3, 0.05)
    u = np.tile([0.0, 0.0, 0.4], (m.n_nodes, 1))
    assert diag.rise_velocity(state_of(m, phi, u=u), m) == pytest.approx(0.4, rel=1e-14)
    assert diag.rise_velocity(state_of(m, phi), m) == 0.0


def test_rise_velocity_over_lower_half():
    m = build_mesh(3, ((0, 0, 0), (1, 1, 1)), 4)
    z = m.coordinates[:, 2]
    u = np.zeros((m.n_nodes, 3))
    u[:, 2] = z
    s = state_of(m, z - 0.5, u=u)
    assert diag.rise_velocity(s, m) == pytest.approx(0.25, rel=1e-14)


def test_rise_velocity_uses_vertical_component_in_2d():
    m = build_mesh(2, ((0, 0), (1, 2)), (4, 8))
    phi = initial_phi(m, (0.5, 0.5), 0.25, 0.05)
    u = np.tile([5.0, -0.3], (m.n_nodes, 1))
    assert diag.rise_velocity(state_of(m, phi, u=u), m) == pytest.approx(-0.3)


@settings(max_examples=20, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10))
def test_rise_velocity_ignores_horizontal_shift(a, b):
    m = build_mesh(3, ((0, 0, 0), (1, 1, 1)), 3)
    rng = np.random.default_rng(1)
    phi = initial_phi(m, (0.5, 0.5, 0.5), 0.3, 0.05)
    u = rng.standard_normal((m.n_nodes, 3))
    shifted = u + np.array([a, b, 0.0])
    r0 = diag.rise_velocity(state_of(m, phi, u=u), m)
    r1 = diag.rise_velocity(state_of(m, phi, u=shifted), m)
    assert r1 == pytest.approx(r0, abs=1e-12)


def test_bubble_center_of_initial_profile():
    m = build_mesh(3, ((0, 0, 0), (1, 1, 1)), 64)
    phi = initial_phi(m, (0.5, 0.5, 0.5), 0.25, 0.02)
    c = diag.bubble_center(state_of(m, phi), m)
    np.testing.assert_allclose(c, 0.5, atol=1e-3)


def test_bubble_center_symmetric_to_roundoff():
    m = build_mesh(2, ((0, 0), (1, 2)), (16, 32))
    phi = initial_phi(m, (0.5, 0.7), 0.25, 0.03)
    c = diag.bubble_center(state_of(m, phi), m)
    assert abs(c[0] - 0.5) < 1e-14


def test_empty_bubble_is_an_error():
    m = build_mesh(2, ((0, 0), (1, 1)), 4)
    with pytest.raises(diag.UndefinedRegionError):
        diag.rise_velocity(state_of(m, 1.0), m)
    with pytest.raises(diag.UndefinedRegionError):
        diag.bubble_center(state_of(m, 0.5), m)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_free_energy_even_and_dissipation_nonnegative(seed):
    rng = np.random.default_rng(seed)
    m = build_mesh(2, ((0, 0), (1, 1)), 5)
    g = derive_groups(PhysicalParams(B_vec=(0.0, 2.0, 0.0)))
    phi = rng.uniform(-1.5, 1.5, m.n_nodes)
    s = state_of(m, phi, u=rng.standard_normal((m.n_nodes, 2)),
                 mu=rng.standard_normal(m.n_nodes), J=rng.standard_normal((m.n_nodes, 3)))
    assert diag.free_energy(phi, g, m) == pytest.approx(diag.free_energy(-phi, g, m), rel=1e-13)
    kin, free = diag.energies(s, g, m)
    assert kin >= 0 and free >= 0
    d = diag.dissipation(s, g, m)
    assert d["visc"] >= 0 and d["ch"] >= 0 and d["ohmic"] >= 0


def test_record_at_step_zero_has_zero_drift():
    m = build_mesh(2, ((0, 0), (1, 2)), (8, 16))
    phi = initial_phi(m, (0.5, 0.5), 0.25, 0.05)
    s = state_of(m, phi)
    s.mass0 = diag.total_mass(phi, m) + 1.0     # even a stale reference gives 0 at step 0
    r = diag.record(s, GROUPS, m)
    assert r.mass_drift == 0.0 and r.step == 0
    assert r.center_z == pytest.approx(0.5, abs=1e-3)
    assert list(diag.TimeSeriesRecord.columns())[:4] == ["step", "time", "mass", "mass_drift"]


def test_kinetic_fractions_and_alignment():
    m = build_mesh(2, ((0, 0), (1, 1)), 4)
    u = np.tile([3.0, 4.0], (m.n_nodes, 1))
    s = state_of(m, 1.0, u=u)
    np.testing.assert_allclose(diag.kinetic_fractions(s, GROUPS, m), [9 / 25, 16 / 25])
    assert diag.field_alignment(s, GROUPS, m, (1.0, 0.0, 0.0)) == pytest.approx(9 / 25)
    assert diag.field_alignment(state_of(m, 1.0), GROUPS, m, (1.0, 0.0, 0.0)) == 0.0
