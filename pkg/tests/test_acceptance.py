"""Acceptance criteria 1-9, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (also gathered in
the terminal summary) before asserting, so a failing criterion still reports
its measured values.
"""

import time
import warnings

import numpy as np
import pytest
from scipy.stats import spearmanr

from conftest import ACCEPTANCE_LINES, random_unitary
from crgate import DriveSpec
from crgate.analytics import (
    PoleScan,
    coupler_off_frequency,
    dispersive_shift_chi,
    dressed_qubit_frequencies,
    find_resonance_poles,
    qubit_charge_elements,
    static_zz_exact,
    two_mode_zz,
)
from crgate.calibration import CrosstalkWarning, ResponseMatrix, invert_response, printed_correction_matrix
from crgate.qpt import (
    chi_from_unitary,
    dataset_from_unitary,
    fidelity,
    ideal_gate_chi,
    mle_project,
    reconstruct_chi,
    run_qpt,
)
from crgate.sequences import (
    echo_rabi,
    echo_target_deviation,
    index_errors,
    r_vector_trace,
    ramsey_zz,
    run_spectator_study,
    spectator_operation_indices,
    synthetic_echo_unitary,
)
from crgate.tomography import (
    ORDERINGS,
    PauliCoefficients,
    oracle_coefficients,
    pauli_coeffs_2q,
    pauli_coeffs_3q,
    rabi_times,
    subspace_generators,
    three_qubit_tomography,
    two_qubit_tomography,
)

pytestmark = pytest.mark.slow


def report(n: int, checks: dict[str, bool], detail: str, t0: float) -> None:
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} ({time.time() - t0:.1f} s) {detail}"
    if failed:
        line += f" failed={failed}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_charge_elements():
    t0 = time.time()
    got = {"Q2": qubit_charge_elements(4.426, -0.218), "Q3": qubit_charge_elements(4.289, -0.218)}
    want = {"Q2": (0.9768, 1.3462), "Q3": (0.9762, 1.3445)}
    err = max(abs(g - w) for q in got for g, w in zip(got[q], want[q]))
    report(1, {"within 2e-3": err < 2e-3, "runtime < 1 s": time.time() - t0 < 1.0}, f"max |dnu| = {err:.2e}", t0)


def test_criterion_2_tomography_matches_oracle(gate_pair):
    t0 = time.time()
    worst, where = 0.0, None
    for dct in np.linspace(100, 180, 5):
        topo = gate_pair.replace_qubit("Q2", omega_ge=gate_pair.qubit("Q3").omega_ge + dct * 1e-3)
        f = dressed_qubit_frequencies(topo)
        for om in np.linspace(10, 30, 5):
            drive = DriveSpec("Q2", float(om), f["Q3"])
            fit = two_qubit_tomography(topo, drive, "Q2", "Q3", rabi_times()).coefficients
            orc = oracle_coefficients(topo, drive, "Q2", "Q3")
            for k in fit.keys():
                ratio = abs(fit[k] - orc[k]) / max(0.02 * abs(orc[k]), 0.02)
                if ratio > worst:
                    worst, where = ratio, (round(dct), round(om), k)
    report(
        2,
        {"within max(2%, 0.02 MHz)": worst <= 1.0, "runtime < 5 min": time.time() - t0 < 300},
        f"worst error / tolerance = {worst:.2f} at {where}",
        t0,
    )


def test_criterion_3_resonance_poles(gate_pair, device4):
    t0 = time.time()
    checks = {}
    iso = sorted(find_resonance_poles(gate_pair, PoleScan("Q2", "Q3", -300.0, 300.0, 1.0)).detunings)
    checks["isolated poles 0, +-218 within 1 MHz"] = len(iso) == 3 and all(
        abs(a - b) <= 1.0 for a, b in zip(iso, (-218.0, 0.0, 218.0))
    )

    chain = device4.subset(["Q1", "Q2", "Q3"])
    roles = {"Q1": "spectator", "Q2": "control", "Q3": "target"}
    cat = find_resonance_poles(chain, PoleScan("Q1", "Q3", -300.0, 200.0, 1.0), roles=roles)
    found = cat.detunings
    checks["spectator poles near 0, -81, -218"] = all(np.min(np.abs(found - x)) <= 10.0 for x in (0.0, -81.0, -218.0))

    j12_off = chain.replace_coupler(0, omega=coupler_off_frequency(chain, 0))
    flagged, baseline = [], 0.0
    for topo, inside in ((chain, (-218.0, -81.0, 0.0)), (j12_off, (-218.0, -81.0, 0.0))):
        for dst in inside:
            t = topo.replace_qubit("Q1", omega_ge=topo.qubit("Q3").omega_ge + dst * 1e-3)
            drive = DriveSpec("Q2", 18.0, dressed_qubit_frequencies(t)["Q3"])
            r = three_qubit_tomography(t, drive, "Q2", "Q3", "Q1", rabi_times(), pole_catalog=cat, pole_coordinate=dst)
            flagged.append(r.flagged)
    for dst in (-150.0, -100.0, -40.0, 30.0, 100.0):
        assert not cat.near(dst, 15.0)
        t = j12_off.replace_qubit("Q1", omega_ge=j12_off.qubit("Q3").omega_ge + dst * 1e-3)
        drive = DriveSpec("Q2", 18.0, dressed_qubit_frequencies(t)["Q3"])
        r = three_qubit_tomography(t, drive, "Q2", "Q3", "Q1", rabi_times(), pole_catalog=cat, pole_coordinate=dst)
        baseline = max(baseline, abs(r.coefficients["ZZX"]))
    checks["flags inside pole windows"] = all(flagged)
    checks["ZZX baseline < 0.05 MHz"] = baseline < 0.05
    checks["runtime < 10 min"] = time.time() - t0 < 600
    detail = (
        f"isolated {[round(float(x), 1) for x in iso]}, spectator {[round(float(x), 1) for x in found]}, "
        f"baseline |ZZX| = {baseline:.4f} MHz"
    )
    report(3, checks, detail, t0)


def test_criterion_4_echo(gate_pair, gate_calibration):
    t0 = time.time()
    cal = gate_calibration
    dev = echo_target_deviation(synthetic_echo_unitary({"IX": 0.9, "IZ": -0.6, "ZI": 1.4}, 70.0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, ent = r_vector_trace(gate_pair, cal.echo, np.arange(40.0, 300.0, 10.0), target="Q3")
    trace = echo_rabi(gate_pair, cal.echo, np.linspace(0.0, ent.time, 15), target="Q3", frame_rate=cal.target_frame_rate)
    x_max = float(np.max(np.abs(trace.bloch[:, :, 0])))
    y_end = trace.bloch[-1, :, 1]
    checks = {
        "synthetic deviation < 1e-6": dev < 1e-6,
        "|<x>| <= 0.05": x_max <= 0.05,
        "<y> full swing": bool(np.all(np.abs(y_end) > 0.95) and y_end[0] * y_end[1] < 0),
        "concurrence >= 0.95": ent.concurrence >= 0.95,
    }
    detail = (
        f"deviation {dev:.1e}, max|x| {x_max:.3f}, y(t_ent) {np.round(y_end, 3).tolist()}, "
        f"t_ent {ent.time:.1f} ns, C {ent.concurrence:.4f}"
    )
    report(4, checks, detail, t0)


def test_criterion_5_gate_fidelity(gate_pair, gate_calibration):
    t0 = time.time()
    sched = gate_calibration.echo.schedule
    pair = ("Q2", "Q3")
    f_unitary = ideal_gate_chi(chi_exp=mle_project(reconstruct_chi(run_qpt(gate_pair, sched, pair)))).fidelity
    coh = {"Q2": (30.0, 25.0), "Q3": (30.0, 25.0)}
    ds = run_qpt(gate_pair, sched, pair, mode="dissipative", coherence=coh)
    f_noisy = ideal_gate_chi(chi_exp=mle_project(reconstruct_chi(ds))).fidelity
    checks = {
        "unitary F >= 0.995": f_unitary >= 0.995,
        "T1/T2 F in [0.97, 0.995]": 0.97 <= f_noisy <= 0.995,
        "runtime < 10 min": time.time() - t0 < 600,
    }
    report(5, checks, f"unitary F = {f_unitary:.5f}, T1=30/T2=25 us F = {f_noisy:.5f}", t0)


def test_criterion_6_spectator_ordering(device4, gate_calibration):
    t0 = time.time()
    indices = spectator_operation_indices(device4)
    results = run_spectator_study(device4, gate_calibration, indices)
    per = index_errors(results)
    checks = {}

    region1 = [r.relative_error for r in results if r.region == "I"]
    checks["(a) region I < 0.005"] = max(abs(e) for e in region1) < 0.005

    pi2 = {xi: e for (i, op), (reg, xi, e) in per.items() if reg == "II" and op == "pi"}
    pi3 = {xi: e for (i, op), (reg, xi, e) in per.items() if reg == "III" and op == "pi"}
    matched = sorted(set(pi2) & set(pi3))
    checks["(b) region III > region II at matched xi"] = bool(matched) and all(pi3[x] > pi2[x] for x in matched)

    rhos = {}
    for region in ("II", "III", "IV"):
        pts = sorted((xi, e) for (i, op), (reg, xi, e) in per.items() if reg == region and op == "pi")
        if len(pts) >= 3:
            rhos[region] = float(spearmanr([p[0] for p in pts], [p[1] for p in pts])[0])
    checks["(c) Spearman > 0.9"] = bool(rhos) and all(r > 0.9 for r in rhos.values())

    idx = sorted({i for i, _ in per})
    # region I errors are pure roundoff, so compare above a 1e-12 floor
    checks["(d) pi >= pi/2 per index"] = all(per[(i, "pi")][2] >= per[(i, "pi/2")][2] - 1e-12 for i in idx)
    checks["runtime < 30 min"] = time.time() - t0 < 1800

    table = ", ".join(f"{i}:{per[(i, 'pi')][2]:.4f}/{per[(i, 'pi/2')][2]:.4f}" for i in idx)
    detail = f"region I max {max(abs(e) for e in region1):.1e}, spearman {rhos}, pi/pi2 errors {table}"
    report(6, checks, detail, t0)


def test_criterion_7_zz_consistency(device4):
    t0 = time.time()
    off = coupler_off_frequency(device4, 0)
    worst = 0.0
    for w in list(np.linspace(6.0, 7.9, 9)) + [off]:
        topo = device4.replace_coupler(0, omega=float(w))
        worst = max(worst, abs(ramsey_zz(topo, "Q1", "Q2").xi_zz - static_zz_exact(topo, ("Q1", "Q2"))))
    at_off = abs(ramsey_zz(device4.replace_coupler(0, omega=off), "Q1", "Q2").xi_zz)
    chi_err = 0.0
    for g, delta in ((63.0, -3357.0), (30.0, -1500.0), (12.0, -600.0), (60.0, 2500.0), (20.0, -2000.0)):
        assert g / abs(delta) < 0.03
        chi = dispersive_shift_chi(g, -218.0, -254.0, delta)
        xi = two_mode_zz(g, 4.426, -218.0, 4.426 - delta * 1e-3, -254.0)
        chi_err = max(chi_err, abs(4 * chi - xi) / abs(xi))
    checks = {
        "Ramsey vs exact within 0.02 MHz": worst < 0.02,
        "xi at off point < 0.01 MHz": at_off < 0.01,
        "chi within 5%": chi_err < 0.05,
    }
    report(7, checks, f"max |Ramsey - exact| {worst:.1e} MHz, |xi(off)| {at_off:.1e} MHz, chi rel err {chi_err:.3f}", t0)


def test_criterion_8_crosstalk_fixture():
    t0 = time.time()
    m = printed_correction_matrix()
    fixture_err = float(np.max(np.abs(invert_response(invert_response(m)).matrix - m.matrix)))
    rng = np.random.default_rng(8)
    random_err = 0.0
    for n in (2, 4, 8, 12):
        for _ in range(25):
            off = rng.uniform(-0.05, 0.05, size=(n, n))
            r = ResponseMatrix(np.eye(n) + off - np.diag(np.diag(off)))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", CrosstalkWarning)
                random_err = max(random_err, float(np.max(np.abs(invert_response(invert_response(r)).matrix - r.matrix))))
    checks = {"fixture within 1e-3": fixture_err < 1e-3, "random within 1e-10": random_err < 1e-10}
    report(8, checks, f"fixture {fixture_err:.1e}, random {random_err:.1e}", t0)


def test_criterion_9_round_trips(gate_pair):
    t0 = time.time()
    rng = np.random.default_rng(9)
    map_err = 0.0
    for ordering in ORDERINGS:
        for _ in range(50):
            if ordering == ORDERINGS[0]:
                keys = ("IX", "IY", "IZ", "ZX", "ZY", "ZZ")
                invert = pauli_coeffs_2q
            else:
                keys = sorted(pauli_coeffs_3q(subspace_generators(PauliCoefficients({}, ordering)), ordering).keys())
                invert = lambda fits, o=ordering: pauli_coeffs_3q(fits, o)
            c = PauliCoefficients(dict(zip(keys, rng.uniform(-3, 3, len(keys)))), ordering)
            back = invert(subspace_generators(c))
            map_err = max(map_err, max(abs(back[k] - c[k]) for k in keys))
    qpt_err = 0.0
    for _ in range(25):
        u = random_unitary(rng, 4)
        qpt_err = max(qpt_err, abs(1.0 - fidelity(reconstruct_chi(dataset_from_unitary(u)), chi_from_unitary(u))))
    f = dressed_qubit_frequencies(gate_pair)["Q3"]
    from crgate.dynamics import Delay, PulseSchedule

    idle = PulseSchedule((Delay(0.0),))
    a = run_qpt(gate_pair, idle, ("Q2", "Q3"), 2000, 17, frame_frequency=f).expectations
    b = run_qpt(gate_pair, idle, ("Q2", "Q3"), 2000, 17, frame_frequency=f).expectations
    checks = {
        "Pauli maps within 1e-9": map_err < 1e-9,
        "QPT reconstruction within 1e-9": qpt_err < 1e-9,
        "seed-deterministic sampling": bool(np.array_equal(a, b)),
    }
    report(9, checks, f"map err {map_err:.1e}, QPT err {qpt_err:.1e}", t0)
