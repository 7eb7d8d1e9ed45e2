import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from phasemhd.params import (InvalidParameterError, InvalidValueError, PhysicalParams,
                             cutoff, derive_groups, interpolate_property)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)


def benchmark(**kw):
    return PhysicalParams(u_ref=math.sqrt(0.98), **kw)


def test_benchmark_capillary_and_mobility_scaling():
    g = derive_groups(benchmark())
    assert g.Cn == pytest.approx(0.005, rel=1e-15)
    assert 1.0 / g.Pe == pytest.approx(0.015, rel=1e-12)


def test_benchmark_groups_match_hand_arithmetic():
    # oracle: the defining formulas evaluated independently in high precision
    u = math.sqrt(0.98)
    lam_hat = 3 * 1.96 / (2 * math.sqrt(2))
    g = derive_groups(benchmark(B_vec=(3.0, 0.0, 0.0)))
    assert g.lambda_hat == pytest.approx(2.07889, abs=5e-6)
    assert g.lambda_hat == pytest.approx(lam_hat, rel=1e-15)
    assert g.Re == pytest.approx(98.995, abs=5e-4)
    # 1000 * 0.98 / 2.0788939... = 471.4045..., i.e. 471.40 to two decimals
    assert g.We == pytest.approx(471.4045, abs=5e-5)
    assert g.We == pytest.approx(1000 * u * u / lam_hat, rel=1e-14)
    assert g.Fr == pytest.approx(1.0, rel=1e-14)
    assert g.N == pytest.approx(9.0914, abs=5e-5)
    assert g.B_hat == (1.0, 0.0, 0.0)


def test_default_velocity_scale_gives_unit_froude_exactly():
    assert derive_groups(PhysicalParams(g=0.98, L_ref=1.0)).Fr == 1.0
    assert derive_groups(PhysicalParams(g=9.81, L_ref=0.3)).Fr == 1.0


def test_gravity_off_disables_froude_term():
    g = derive_groups(PhysicalParams(g=0.0, u_ref=1.0))
    assert math.isinf(g.Fr) and g.inv_Fr == 0.0 and not g.gravity_enabled


def test_zero_field_switches_off_stuart_number():
    g = derive_groups(PhysicalParams())
    assert g.N == 0.0 and not g.magnetic_enabled


def test_drho_dphi():
    g = derive_groups(PhysicalParams())
    assert g.drho_dphi == pytest.approx((1000 - 1) / 2000)


@pytest.mark.parametrize("kw", [dict(rho_plus=0.0), dict(eta_minus=-1.0),
                                dict(epsilon=0.0), dict(g=-1.0), dict(u_ref=0.0),
                                dict(g=0.0)])
def test_invalid_parameters_rejected(kw):
    with pytest.raises(InvalidParameterError):
        PhysicalParams(**kw)


def test_scaling_law_can_be_disabled():
    g = derive_groups(PhysicalParams(), scaling_law=False, Pe=50.0)
    assert g.Pe == 50.0
    with pytest.raises(InvalidParameterError):
        derive_groups(PhysicalParams(), scaling_law=False)


@given(st.floats(min_value=1e-4, max_value=0.1))
def test_capillary_number_scales_linearly(eps):
    g1 = derive_groups(PhysicalParams(epsilon=eps))
    g2 = derive_groups(PhysicalParams(epsilon=2 * eps))
    assert g2.Cn == pytest.approx(2 * g1.Cn, rel=1e-15)
    assert 1 / g2.Pe == pytest.approx(2 / g1.Pe, rel=1e-14)
    assert g1.inv_Pe == pytest.approx(3 * g1.Cn, rel=1e-15)


def test_cutoff_examples():
    assert cutoff(1.5) == 1.0
    assert cutoff(-0.3) == -0.3
    assert cutoff(-2.0) == -1.0
    np.testing.assert_array_equal(cutoff(np.array([-3.0, 0.2, 7.0])), [-1.0, 0.2, 1.0])


def test_cutoff_nan_rejected():
    with pytest.raises(InvalidValueError):
        cutoff(float("nan"))


@given(finite)
def test_cutoff_idempotent(x):
    assert cutoff(cutoff(x)) == cutoff(x)


def test_interpolation_examples():
    assert interpolate_property(1.0, 1000.0, 1.0, 1000.0) == 1.0
    assert interpolate_property(-1.0, 1000.0, 1.0, 1000.0) == 0.001
    assert interpolate_property(0.0, 1000.0, 1.0, 1000.0) == pytest.approx(0.5005, rel=1e-14)


def test_interpolation_rejects_bad_reference():
    with pytest.raises(InvalidParameterError):
        interpolate_property(0.0, 1.0, 2.0, 0.0)


@given(finite, st.floats(min_value=1e-3, max_value=1e4), st.floats(min_value=1e-3, max_value=1e4),
       st.floats(min_value=1e-3, max_value=1e4))
def test_interpolation_bounded(phi, plus, minus, ref):
    v = interpolate_property(phi, plus, minus, ref)
    lo, hi = min(plus, minus) / ref, max(plus, minus) / ref
    assert lo * (1 - 1e-12) <= v <= hi * (1 + 1e-12)


def test_pure_phases_exact_for_all_properties():
    p = PhysicalParams()
    for plus, minus, ref in ((p.rho_plus, p.rho_minus, p.reference_density),
                             (p.eta_plus, p.eta_minus, p.reference_viscosity),
                             (p.sigma_plus, p.sigma_minus, p.reference_conductivity)):
        assert interpolate_property(1.0, plus, minus, ref) == plus / ref
        assert interpolate_property(-1.0, plus, minus, ref) == minus / ref
