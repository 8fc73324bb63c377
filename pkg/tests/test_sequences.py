import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from crgate import DriveSpec
from crgate.analytics import static_zz_exact
from crgate.device import DeviceTopology, PairCoupling, TransmonSpec
from crgate.dynamics import Delay, DriveSegment, Rotation
from crgate.qpt import INPUT_LABELS
from crgate.sequences import (
    DRIVE_ODD_TERMS,
    SpectatorResult,
    build_echo_schedule,
    concurrence,
    echo_target_deviation,
    index_errors,
    pauli_generator,
    pauli_operator,
    ramsey_zz,
    spectator_excitation_protocol,
    spectator_operation_indices,
    synthetic_echo_unitary,
    synthetic_r_vector,
)
from crgate.units import mhz_to_rad

# --- echo -----------------------------------------------------------------


def test_echo_layout():
    drive = DriveSpec("Q2", 20.0, 4.29, phase=0.3, ramp=10.0)
    echo = build_echo_schedule(drive, 70.0, target="Q3", pad=20.0)
    segs = echo.schedule.segments
    kinds = [type(s) for s in segs]
    assert kinds == [DriveSegment, Delay, Rotation, Delay, DriveSegment, Delay, Rotation, Delay]
    assert segs[4].drive.phase == pytest.approx(0.3 + math.pi)
    assert echo.total_duration == pytest.approx(220.0)
    assert echo.control == "Q2" and echo.cr_duration == 140.0


def test_echo_half_duration_checks():
    drive = DriveSpec("Q2", 20.0, 4.29, ramp=10.0)
    with pytest.raises(ValueError):
        build_echo_schedule(drive, -1.0)
    with pytest.raises(ValueError):
        build_echo_schedule(drive, 5.0)
    zero = build_echo_schedule(drive, 0.0)
    assert zero.schedule.total_duration == pytest.approx(0.0)


def test_echo_cancels_single_qubit_terms():
    u = synthetic_echo_unitary({"IX": 0.8, "IZ": -0.5, "ZI": 1.3}, 70.0)
    assert echo_target_deviation(u) < 1e-6


def test_echo_keeps_zx():
    u = synthetic_echo_unitary({"ZX": 0.5}, 70.0, DRIVE_ODD_TERMS)
    want = expm(-1j * mhz_to_rad(0.5) * 140.0 * pauli_operator("ZX"))
    np.testing.assert_allclose(u, want, atol=1e-12)
    assert echo_target_deviation(u) > 0.1


def test_echo_zero_duration_is_identity():
    np.testing.assert_allclose(synthetic_echo_unitary({"ZX": 1.0, "IX": 2.0}, 0.0), np.eye(4), atol=1e-12)


@pytest.mark.parametrize("c", [0.5, 1.25, 2.0])
def test_synthetic_r_vector_minimum(c):
    expected = math.pi / (4 * mhz_to_rad(c))
    durations = np.linspace(0.5 * expected, 1.5 * expected, 201)
    tr = synthetic_r_vector({"ZX": c}, durations)
    assert durations[np.argmin(tr.r_norm)] == pytest.approx(expected, rel=0.02)
    assert tr.r_norm[0] == pytest.approx(2 * abs(math.cos(2 * mhz_to_rad(c) * durations[0])), abs=1e-9)


# --- entanglement ---------------------------------------------------------


def test_concurrence_limits():
    bell = np.array([1, 0, 0, 1]) / math.sqrt(2)
    assert concurrence(np.outer(bell, bell.conj())) == pytest.approx(1.0, abs=1e-9)
    prod = np.kron([1, 0], [1, 1]) / math.sqrt(2)
    assert concurrence(np.outer(prod, prod.conj())) == pytest.approx(0.0, abs=1e-9)
    assert concurrence(np.eye(4) / 4) == 0.0


@given(st.floats(0.0, 1.0))
def test_werner_concurrence(p):
    bell = np.array([1, 0, 0, 1]) / math.sqrt(2)
    rho = p * np.outer(bell, bell) + (1 - p) * np.eye(4) / 4
    assert concurrence(rho) == pytest.approx(max(0.0, (3 * p - 1) / 2), abs=1e-9)


@given(st.lists(st.floats(-0.3, 0.3), min_size=15, max_size=15))
def test_pauli_generator_round_trip(vals):
    labels = [a + b for a in "IXYZ" for b in "IXYZ"][1:]
    h = sum(v * pauli_operator(p) for p, v in zip(labels, vals))
    got = pauli_generator(expm(-1j * h))
    for p, v in zip(labels, vals):
        assert got[p] == pytest.approx(v, abs=1e-9)
    assert got["II"] == pytest.approx(0.0, abs=1e-9)


# --- Ramsey ---------------------------------------------------------------


def test_ramsey_decoupled_is_zero():
    a, b = TransmonSpec("A", 4.3, -0.22), TransmonSpec("B", 4.45, -0.2)
    topo = DeviceTopology((a, b), couplings=(PairCoupling(j=0.0),))
    assert ramsey_zz(topo, "A", "B").xi_zz == pytest.approx(0.0, abs=1e-6)


def test_ramsey_matches_exact_zz(gate_pair):
    r = ramsey_zz(gate_pair, "Q3", "Q2")
    assert r.xi_zz == pytest.approx(static_zz_exact(gate_pair, ("Q2", "Q3")), abs=0.02)
    assert ramsey_zz(gate_pair, "Q3", "Q2", excited_label=0).xi_zz == pytest.approx(-r.xi_zz)


# --- spectator protocol ---------------------------------------------------


def test_spectator_batches(device4):
    ops = ({"Q1": "idle"}, {"Q1": "pi"}, {"Q1": "pi/2"})
    batches = spectator_excitation_protocol(device4, INPUT_LABELS, ops)
    assert [b.group for b in batches] == ["control", "experimental", "experimental"]
    assert [b.label for b in batches] == ["idle", "pi:Q1", "pi/2:Q1"]
    assert batches[1].preparation[0].angle == pytest.approx(math.pi)
    assert batches[2].preparation[0].axis == "y"
    assert len(batches[0].inputs) == 16
    with pytest.raises(ValueError):
        spectator_excitation_protocol(device4, (), ({"Q1": "pi/4"},))
    with pytest.raises(ValueError):
        spectator_excitation_protocol(device4, (), ({"Q9": "pi"},))


@pytest.fixture(scope="module")
def indices(device4):
    return spectator_operation_indices(device4)


def test_operation_indices_layout(indices):
    assert [oi.index for oi in indices] == list(range(1, 11))
    assert [oi.region for oi in indices] == ["I"] + ["II"] * 4 + ["III"] * 3 + ["IV"] * 2
    assert len(indices[0].spectator_ops) == 5
    assert len(indices[-1].spectator_ops) == 7


def test_operation_indices_hit_their_zz(device4, indices):
    for oi in indices:
        topo = oi.topology(device4)
        if "Q1" in oi.xi_zz:
            assert abs(static_zz_exact(topo, ("Q1", "Q2"))) == pytest.approx(oi.xi_zz["Q1"], abs=1e-3)
        if "Q4" in oi.xi_zz:
            assert abs(static_zz_exact(topo, ("Q3", "Q4"))) == pytest.approx(oi.xi_zz["Q4"], abs=1e-3)


def test_index_errors_keeps_worst():
    rows = [
        SpectatorResult(2, "II", "idle", 0.0, 0.99, 0.0, (0.0, 0.0)),
        SpectatorResult(2, "II", "pi:Q1", 0.1, 0.98, 0.01, (0.0, 0.0)),
        SpectatorResult(9, "IV", "pi:Q1", 0.2, 0.97, 0.02, (0.0, 0.0)),
        SpectatorResult(9, "IV", "pi:Q4", 0.2, 0.96, 0.03, (0.0, 0.0)),
        SpectatorResult(9, "IV", "pi:Q1,pi:Q4", 0.2, 0.965, 0.025, (0.0, 0.0)),
        SpectatorResult(9, "IV", "pi/2:Q1", 0.2, 0.985, 0.005, (0.0, 0.0)),
    ]
    out = index_errors(rows)
    assert out == {(2, "pi"): ("II", 0.1, 0.01), (9, "pi"): ("IV", 0.2, 0.03), (9, "pi/2"): ("IV", 0.2, 0.005)}
