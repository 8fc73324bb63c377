import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crgate.analytics import (
    CRRateInput,
    EffectiveCouplingInput,
    PoleProximityWarning,
    PoleScan,
    charge_matrix_elements,
    coupler_off_frequency,
    cr_rate_u1,
    dispersive_shift_chi,
    effective_coupling,
    epsilon_root,
    find_resonance_poles,
    qubit_charge_elements,
    static_zz_exact,
    two_mode_zz,
    zx_coefficient_from_u1,
)
from crgate.device import DeviceTopology, PairCoupling, TransmonSpec


# --- effective coupling ---------------------------------------------------


def test_effective_coupling_gate_pair():
    j = effective_coupling(EffectiveCouplingInput(63.0, 63.0, 5.5, 4.426 - 7.783, 4.289 - 7.783))
    assert j == pytest.approx(4.3409, abs=1e-3)


def test_effective_coupling_limits():
    assert effective_coupling(EffectiveCouplingInput(0.0, 63.0, 0.0, -3.0, -3.0)) == 0.0
    g, d = 50.0, -2.5
    assert effective_coupling(EffectiveCouplingInput(g, g, 0.0, d, d)) == pytest.approx(g * g / (d * 1e3))


@given(
    st.floats(1, 100), st.floats(1, 100), st.floats(-20, 20),
    st.floats(-5, -0.5), st.floats(-5, -0.5),
)
def test_effective_coupling_is_additive_and_odd(g1, g2, gd, dl, dr):
    full = effective_coupling(EffectiveCouplingInput(g1, g2, gd, dl, dr))
    direct = effective_coupling(EffectiveCouplingInput(0.0, 0.0, gd, dl, dr))
    virtual = effective_coupling(EffectiveCouplingInput(g1, g2, 0.0, dl, dr))
    assert full == pytest.approx(direct + virtual, rel=1e-12, abs=1e-12)
    flipped = effective_coupling(EffectiveCouplingInput(g1, g2, -gd, -dl, -dr))
    assert flipped == pytest.approx(-full, rel=1e-12, abs=1e-12)


def test_coupler_off_frequency_zeroes_j(device4):
    off = coupler_off_frequency(device4, 0)
    assert off == pytest.approx(5.0351, abs=1e-3)
    assert device4.replace_coupler(0, omega=off).pair_coupling_mhz(0) == pytest.approx(0.0, abs=1e-9)


# --- charge matrix elements ----------------------------------------------


def test_epsilon_oracles():
    assert epsilon_root(-218 / 4426) == pytest.approx(0.1716, abs=1e-4)
    assert epsilon_root(-218 / 4289) == pytest.approx(0.1765, abs=1e-4)
    assert 0 < epsilon_root(-1e-9) < 1e-6


def test_charge_elements_harmonic_limit():
    assert charge_matrix_elements(0.0) == pytest.approx((1.0, math.sqrt(2)))


def test_charge_elements_table():
    assert qubit_charge_elements(4.426, -0.218) == pytest.approx((0.9768, 1.3462), abs=2e-3)
    assert qubit_charge_elements(4.289, -0.218) == pytest.approx((0.9762, 1.3445), abs=2e-3)


@given(st.floats(-0.45, -1e-4))
def test_epsilon_solves_quadratic(r):
    e = epsilon_root(r)
    assert e > 0
    assert (9 - 4 * r) * e * e + 16 * (1 - r) * e + 64 * r == pytest.approx(0.0, abs=1e-9)


def test_epsilon_domain_error():
    with pytest.raises(ValueError):
        epsilon_root(0.1)


# --- CR rate --------------------------------------------------------------


def test_u1_linear_in_drive_and_coupling():
    base = CRRateInput(4.34, 18.0, 137.0, -218.0)
    assert cr_rate_u1(CRRateInput(4.34, 0.0, 137.0, -218.0)) == 0.0
    assert cr_rate_u1(CRRateInput(-4.34, 18.0, 137.0, -218.0)) == pytest.approx(-cr_rate_u1(base))
    assert zx_coefficient_from_u1(cr_rate_u1(base)) == pytest.approx(cr_rate_u1(base) / 4)


def test_u1_pole_warning_and_error():
    with pytest.warns(PoleProximityWarning):
        cr_rate_u1(CRRateInput(4.34, 18.0, 5.0, -218.0))
    with pytest.raises(ZeroDivisionError):
        CRRateInput(4.34, 18.0, 218.0, -218.0)


def test_u1_matches_simulated_zx(gate_pair):
    from crgate import DriveSpec
    from crgate.analytics import dressed_qubit_frequencies
    from crgate.tomography import oracle_coefficients

    f = dressed_qubit_frequencies(gate_pair)
    drive = DriveSpec("Q2", 18.0, f["Q3"])
    zx = oracle_coefficients(gate_pair, drive, "Q2", "Q3")["ZX"]
    nu_c = qubit_charge_elements(4.426, -0.218)
    nu_t = qubit_charge_elements(4.289, -0.218)
    u1 = cr_rate_u1(CRRateInput(gate_pair.pair_coupling_mhz(0), 18.0, 137.0, -218.0, 0.0, nu_t[0], nu_c[0], nu_c[1]))
    assert abs(zx) == pytest.approx(abs(zx_coefficient_from_u1(u1)), rel=0.15)


# --- dispersive shift and ZZ ----------------------------------------------


def test_chi_zero_cases():
    assert dispersive_shift_chi(0.0, -218.0, -254.0, -3357.0) == 0.0
    assert dispersive_shift_chi(63.0, -254.0, 254.0, -3357.0) == 0.0


@pytest.mark.parametrize("g,delta", [(63.0, -3357.0), (30.0, -1500.0), (12.0, -600.0), (60.0, 2500.0)])
def test_chi_matches_two_mode_diagonalization(g, delta):
    chi = dispersive_shift_chi(g, -218.0, -254.0, delta)
    xi = two_mode_zz(g, 4.426, -218.0, 4.426 - delta * 1e-3, -254.0)
    # chi is the ZZ Pauli coefficient, a quarter of the conditional shift
    assert 4 * chi == pytest.approx(xi, rel=0.05)


def test_zz_decoupled_and_two_level():
    a, b = TransmonSpec("A", 4.3, -0.22), TransmonSpec("B", 4.45, -0.2)
    off = DeviceTopology((a, b), couplings=(PairCoupling(j=0.0),))
    assert static_zz_exact(off, ("A", "B")) == pytest.approx(0.0, abs=1e-9)
    two_level = DeviceTopology((a, b), couplings=(PairCoupling(j=8.0),), truncation=2)
    assert static_zz_exact(two_level, ("A", "B")) == pytest.approx(0.0, abs=1e-9)


def test_zz_scales_as_fourth_power_of_g(gate_pair):
    gs = np.geomspace(1.0, 100.0, 7)
    xs = []
    for g in gs:
        t = gate_pair.replace_coupling(0, g_left=float(g), g_right=float(g), g_direct=0.0)
        xs.append(abs(static_zz_exact(t, ("Q2", "Q3"))))
    slope = np.polyfit(np.log(gs), np.log(xs), 1)[0]
    assert slope == pytest.approx(4.0, abs=0.1)


def test_gate_pair_zz_value(gate_pair):
    assert static_zz_exact(gate_pair, ("Q2", "Q3")) == pytest.approx(0.5678, abs=1e-3)


# --- poles ----------------------------------------------------------------


def test_isolated_pair_poles(gate_pair):
    cat = find_resonance_poles(gate_pair, PoleScan("Q2", "Q3", -300.0, 300.0, 1.0))
    found = sorted(cat.detunings)
    assert len(found) == 3
    for got, want in zip(found, (-218.0, 0.0, 218.0)):
        assert got == pytest.approx(want, abs=1.0)


def test_pole_free_window_is_empty(gate_pair):
    assert len(find_resonance_poles(gate_pair, PoleScan("Q2", "Q3", 20.0, 180.0, 1.0))) == 0


def test_pole_scan_validation():
    with pytest.raises(ValueError):
        PoleScan("Q1", "Q2", 10.0, -10.0)
