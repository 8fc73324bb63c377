import math

import numpy as np
import pytest
import yaml
from hypothesis import given
from hypothesis import strategies as st

from crgate import DeviceConfigError, DriveSpec, build_hamiltonian, data_path, load_device, save_device
from crgate.device import (
    DeviceTopology,
    PairCoupling,
    TransmonSpec,
    basis_index,
    basis_levels,
    envelope_value,
    hermiticity_error,
    read_config,
    topology_from_dict,
)
from crgate.units import TWO_PI, ghz_to_rad, mhz_to_rad, rad_to_ghz, rad_to_mhz


def test_fixture_values(device4):
    q2 = device4.qubit("Q2")
    assert q2.omega_ge == 4.426
    assert q2.anharmonicity == -0.218
    assert device4.couplings[1].g_left == 63.0
    assert device4.couplings[1].g_direct == 5.5
    # magnitudes in the table, stored negative
    assert all(c.anharmonicity < 0 for c in device4.couplers)


def test_truncation_one_rejected(tmp_path):
    cfg = read_config(data_path("two_qubit_only.yaml"))
    cfg["truncation"] = 1
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump(cfg))
    with pytest.raises(DeviceConfigError, match="truncation"):
        load_device(path)


def test_effective_model_round_trip(tmp_path, two_qubit_only):
    assert two_qubit_only.couplers == ()
    assert two_qubit_only.couplings[0].j == pytest.approx(4.3412)
    path = tmp_path / "rt.yaml"
    save_device(two_qubit_only, path)
    assert load_device(path) == two_qubit_only


def test_unknown_key_and_missing_j():
    with pytest.raises(DeviceConfigError, match="unknown keys"):
        topology_from_dict({"qubits": [{"label": "A", "omega_ge": 4.0, "anharmonicity": -0.2, "colour": 1}]})
    with pytest.raises(DeviceConfigError, match="j is required"):
        topology_from_dict(
            {
                "qubits": [
                    {"label": "A", "omega_ge": 4.0, "anharmonicity": -0.2},
                    {"label": "B", "omega_ge": 4.1, "anharmonicity": -0.2},
                ],
                "couplings": [{"g_left": 10.0}],
            }
        )


def test_positive_coupler_alpha_is_stored_negative():
    cfg = read_config(data_path("device_4q.yaml"))
    cfg["couplers"][0]["anharmonicity"] = 0.254
    with pytest.warns(UserWarning, match="stored as"):
        topo = topology_from_dict(cfg)
    assert topo.couplers[0].anharmonicity == -0.254


def test_single_transmon_lab_spectrum():
    topo = DeviceTopology((TransmonSpec("A", 4.5, -0.2),), truncation=3)
    h = build_hamiltonian(topo, frame="lab").static
    w = ghz_to_rad(4.5)
    np.testing.assert_allclose(np.diag(h).real, [0.0, w, 2 * w + ghz_to_rad(-0.2)], atol=1e-12)
    assert hermiticity_error(h) == 0.0


def test_decoupled_pair_energies_add():
    a, b = TransmonSpec("A", 4.3, -0.22), TransmonSpec("B", 4.6, -0.2)
    topo = DeviceTopology((a, b), couplings=(PairCoupling(j=0.0),), truncation=3)
    ev = np.sort(np.linalg.eigvalsh(build_hamiltonian(topo, frame="lab").static))
    single = lambda q: [0.0, ghz_to_rad(q.omega_ge), 2 * ghz_to_rad(q.omega_ge) + ghz_to_rad(q.anharmonicity)]
    sums = np.sort([x + y for x in single(a) for y in single(b)])
    np.testing.assert_allclose(ev, sums, atol=1e-10)


def test_avoided_crossing_half_splitting_is_j(two_qubit_only):
    j = two_qubit_only.couplings[0].j
    w3 = two_qubit_only.qubit("Q3").omega_ge
    gaps = []
    for w2 in np.linspace(w3 - 0.003, w3 + 0.003, 121):
        topo = two_qubit_only.replace_qubit("Q2", omega_ge=float(w2))
        ev = np.sort(np.linalg.eigvalsh(build_hamiltonian(topo, frame="lab").static))
        gaps.append(ev[2] - ev[1])
    assert rad_to_mhz(min(gaps)) / 2 == pytest.approx(abs(j), rel=0.01)


def test_drive_hamiltonian_is_hermitian(gate_pair):
    drive = DriveSpec("Q2", 20.0, 4.29, phase=0.7)
    ham = build_hamiltonian(gate_pair, drive=drive, duration=100.0)
    for t in (0.0, 5.0, 50.0, 99.0):
        assert hermiticity_error(ham(t)) < 1e-12


def test_envelope_ramps():
    assert envelope_value(0.0, 100.0, 10.0) == pytest.approx(0.0, abs=1e-12)
    assert envelope_value(50.0, 100.0, 10.0) == pytest.approx(1.0)
    assert 0.0 < envelope_value(5.0, 100.0, 10.0) < 1.0
    assert envelope_value(5.0, 100.0, 10.0) == pytest.approx(envelope_value(95.0, 100.0, 10.0))


@given(st.lists(st.integers(2, 4), min_size=1, max_size=4), st.data())
def test_basis_index_round_trip(dims, data):
    levels = tuple(data.draw(st.integers(0, d - 1)) for d in dims)
    assert basis_levels(basis_index(levels, dims), dims) == levels


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_unit_round_trips(x):
    assert rad_to_ghz(ghz_to_rad(x)) == pytest.approx(x, rel=1e-12, abs=1e-12)
    assert rad_to_mhz(mhz_to_rad(x)) == pytest.approx(x, rel=1e-12, abs=1e-12)
    assert mhz_to_rad(1000.0) == pytest.approx(TWO_PI)


def test_invalid_transmon_values():
    with pytest.raises(DeviceConfigError):
        TransmonSpec("A", -1.0, -0.2)
    with pytest.raises(DeviceConfigError):
        TransmonSpec("A", 4.0, -0.2, readout_fid_g=0.3)
    assert math.isfinite(TransmonSpec("A", 4.0, -0.2, t1=30.0).t1)
