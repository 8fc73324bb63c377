"""Composite experiments: echoed CR, R-vector scans, Ramsey ZZ and spectator protocols."""

from __future__ import annotations

import dataclasses
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.linalg import logm, polar
from scipy.optimize import brentq, minimize_scalar

from .analytics import coupler_off_frequency, dressed_qubit_frequencies, static_zz_exact
from .device import DeviceTopology, DriveSpec, basis_index, build_hamiltonian
from .dynamics import (
    PAULI,
    Delay,
    DriveSegment,
    PulseSchedule,
    Rotation,
    bloch_from_density,
    dressed_basis,
    dressed_state,
    hermitian_expm,
    prepare_levels,
    product_state,
    propagate,
    qubit_frame,
    reduced_density,
)
from .qpt import corrected_unitary_fidelity
from .tomography import drive_phase_calibration
from .units import TWO_PI, mhz_to_rad

GATE_HALF_DURATION = 70.0  # ns
GATE_PAD = 20.0  # ns of idle on each side of an echo pi pulse
GATE_RAMP = 20.0  # ns; shorter ramps leak the control into |2> at gate amplitudes


class SequenceError(RuntimeError):
    pass


# --- echo -----------------------------------------------------------------


@dataclass(frozen=True)
class EchoSchedule:
    """CR/2(phi) -> pi_x(control) -> CR/2(phi + pi) -> pi_x(control), with optional idle padding."""

    drive: DriveSpec
    cr_half_duration: float
    schedule: PulseSchedule
    target: Optional[str] = None
    pad: float = 0.0

    @property
    def control(self) -> str:
        return self.drive.target_qubit

    @property
    def total_duration(self) -> float:
        return self.schedule.total_duration

    @property
    def cr_duration(self) -> float:
        return 2.0 * self.cr_half_duration


def build_echo_schedule(
    drive: DriveSpec,
    half_duration: float,
    *,
    target: Optional[str] = None,
    pad: float = 0.0,
    strict: bool = True,
) -> EchoSchedule:
    """Echoed CR schedule; the second half reverses polarity via phi -> phi + pi.

    ``pad`` ns of idle time surround each control pi pulse. With ``strict``
    a nonzero half duration must exceed the ramp time.
    """
    if half_duration < 0:
        raise ValueError("half_duration must be >= 0")
    if strict and 0 < half_duration <= drive.ramp:
        raise ValueError(f"half_duration {half_duration} ns must exceed the {drive.ramp} ns ramp")
    pi = Rotation(drive.target_qubit, "x", math.pi)
    idle = [Delay(pad)] if pad > 0 else []
    segs = [DriveSegment(drive, half_duration)] + idle + [pi] + idle
    segs += [DriveSegment(drive.with_phase(drive.phase + math.pi), half_duration)] + idle + [pi] + idle
    return EchoSchedule(drive, float(half_duration), PulseSchedule(segs), target, float(pad))


def gate_schedule(drive: DriveSpec, target: Optional[str] = None) -> EchoSchedule:
    """The 220 ns echoed gate: two 70 ns CR halves and 40 ns around each pi pulse."""
    return build_echo_schedule(drive, GATE_HALF_DURATION, target=target, pad=GATE_PAD)


def pauli_operator(label: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for ch in label:
        out = np.kron(out, PAULI[ch])
    return out


DRIVE_ODD_TERMS = frozenset({"IX", "IY", "ZX", "ZY"})


def synthetic_echo_unitary(
    coefficients: Mapping[str, float],
    half_duration: float,
    odd_terms: Optional[Iterable[str]] = None,
) -> np.ndarray:
    """Echo of a synthetic two-qubit generator ``H = sum c_P P`` (MHz, control⊗target).

    Polarity reversal negates the terms in ``odd_terms``. By default the
    whole synthetic generator is treated as drive Hamiltonian and negated;
    pass :data:`DRIVE_ODD_TERMS` to flip only the drive-linear terms.
    """
    odd = set(coefficients) if odd_terms is None else set(odd_terms)
    h_plus = sum(mhz_to_rad(c) * pauli_operator(p) for p, c in coefficients.items())
    h_minus = sum(mhz_to_rad(-c if p in odd else c) * pauli_operator(p) for p, c in coefficients.items())
    if not coefficients:
        h_plus = h_minus = np.zeros((4, 4), dtype=complex)
    x_c = pauli_operator("XI")
    return x_c @ hermitian_expm(h_minus, half_duration) @ x_c @ hermitian_expm(h_plus, half_duration)


def echo_target_deviation(u: np.ndarray) -> float:
    """Distance of a 4x4 echo unitary from (control phase) x identity on the target.

    Returns the largest entry of U - D, where D keeps only the control-basis
    phases of U, so any residual target rotation or control flip counts.
    """
    u = np.asarray(u).reshape(2, 2, 2, 2)  # c', t', c, t
    dev = 0.0
    for c in range(2):
        for c2 in range(2):
            block = u[c2, :, c, :]
            if c2 != c:
                dev = max(dev, float(np.max(np.abs(block))))
                continue
            tr = np.trace(block)
            phase = tr / abs(tr) if abs(tr) > 0 else 1.0
            dev = max(dev, float(np.max(np.abs(block - phase * np.eye(2)))))
    return dev


# --- R vector -------------------------------------------------------------


@dataclass(frozen=True)
class RVectorTrace:
    times: np.ndarray  # total CR duration, ns
    r_norm: np.ndarray
    bloch_pairs: np.ndarray  # shape (n, 2, 3): target Bloch vector for control 0 and 1

    def __post_init__(self):
        if np.any(self.r_norm < -1e-12) or np.any(self.r_norm > 2 * math.sqrt(3) + 1e-9):
            raise ValueError("r_norm outside [0, 2 sqrt 3]")

    def rows(self) -> list[dict]:
        return [
            {
                "cr_duration_ns": t,
                "r_norm": r,
                "x0": b[0, 0], "y0": b[0, 1], "z0": b[0, 2],
                "x1": b[1, 0], "y1": b[1, 1], "z1": b[1, 2],
            }
            for t, r, b in zip(self.times, self.r_norm, self.bloch_pairs)
        ]


@dataclass(frozen=True)
class EntanglingTime:
    time: float  # ns of CR drive
    concurrence: float
    r_min: float


def r_norm(r0: np.ndarray, r1: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(r0) + np.asarray(r1)))


def concurrence(rho: np.ndarray) -> float:
    """Wootters concurrence of a two-qubit density matrix."""
    yy = np.kron(PAULI["Y"], PAULI["Y"])
    rho = rho / np.trace(rho)
    tilde = yy @ rho.conj() @ yy
    ev = np.sqrt(np.clip(np.sort(np.real(np.linalg.eigvals(rho @ tilde)))[::-1], 0, None))
    return float(max(0.0, ev[0] - ev[1] - ev[2] - ev[3]))


def two_qubit_block(state: np.ndarray, dims: Sequence[int], modes: Sequence[int]) -> np.ndarray:
    """Reduced density matrix of two modes restricted to their 0/1 levels (unnormalized)."""
    rho = reduced_density(state, dims, list(modes))
    d1 = dims[modes[1]]
    idx = [a * d1 + b for a in range(2) for b in range(2)]
    return rho[np.ix_(idx, idx)]


def _echo_final_states(topology, echo, target, model, dt, preps, ham=None, frame=None):
    res = propagate(topology, echo.schedule, "unitary", dt, model=model, ham=ham, frame=frame)
    u = res.qubit_frame_propagator()
    outs = []
    for prep in preps:
        if isinstance(prep, np.ndarray):
            psi = prep
        else:
            psi = dressed_state(res.hamiltonian, prepare_levels(res.hamiltonian, prep))
        outs.append(u @ psi)
    return res, outs


def r_vector_trace(
    topology: DeviceTopology,
    echo: EchoSchedule,
    durations: Sequence[float],
    *,
    target: Optional[str] = None,
    model: str = "effective_qubits",
    dt: float = 0.1,
    threshold: float = 0.2,
    concurrence_floor: float = 0.95,
) -> tuple[RVectorTrace, EntanglingTime]:
    """Scan the total CR duration of ``echo`` and locate maximal entanglement.

    The entangling time is the first local minimum of ``|r0 + r1|`` below
    ``threshold``, refined by a parabola through the neighbouring samples.
    The concurrence of the state grown from ``|+>|0>`` is evaluated there.
    """
    target = target or echo.target
    if target is None:
        raise ValueError("target qubit required")
    control = echo.control
    durations = np.asarray(durations, dtype=float)
    ham = build_hamiltonian(topology, mode=model, frame="rotating_at_drive", frame_frequency=echo.drive.frequency)
    frame = qubit_frame(ham)

    def echo_at(total):
        return build_echo_schedule(echo.drive, total / 2.0, target=target, pad=echo.pad, strict=False)

    norms, pairs = [], []
    for total in durations:
        res, (s0, s1) = _echo_final_states(topology, echo_at(total), target, model, dt, [{control: 0}, {control: 1}], ham, frame)
        k = res.labels.index(target)
        b0 = np.array(bloch_from_density(reduced_density(s0, res.dims, [k]))[:3])
        b1 = np.array(bloch_from_density(reduced_density(s1, res.dims, [k]))[:3])
        pairs.append([b0, b1])
        norms.append(r_norm(b0, b1))
    norms = np.array(norms)
    trace = RVectorTrace(durations, norms, np.array(pairs))

    idx = None
    for i in range(len(norms)):
        left = norms[i - 1] if i > 0 else np.inf
        right = norms[i + 1] if i + 1 < len(norms) else np.inf
        if norms[i] < threshold and norms[i] <= left and norms[i] <= right:
            idx = i
            break
    if idx is None:
        raise SequenceError(f"no R-vector minimum below {threshold} up to {durations.max():.1f} ns")
    t_min, r_min = durations[idx], norms[idx]
    if 0 < idx < len(norms) - 1:
        x = durations[idx - 1 : idx + 2]
        y = norms[idx - 1 : idx + 2]
        a, b, c = np.polyfit(x, y, 2)
        if a > 0:
            t_min = float(np.clip(-b / (2 * a), x[0], x[2]))
            r_min = float(max(0.0, np.polyval([a, b, c], t_min)))

    res, (psi,) = _echo_final_states(
        topology, echo_at(t_min), target, model, dt, [_plus_zero(ham, control, target)], ham, frame
    )
    conc = concurrence(two_qubit_block(psi, res.dims, [res.labels.index(control), res.labels.index(target)]))
    if conc < concurrence_floor:
        warnings.warn(f"concurrence {conc:.3f} at the R-vector minimum is below {concurrence_floor}", stacklevel=2)
    return trace, EntanglingTime(float(t_min), conc, float(r_min))


def _plus_zero(ham, control, target) -> np.ndarray:
    lv1 = [0] * len(ham.dims)
    lv1[ham.mode(control)] = 1
    return (dressed_state(ham, [0] * len(ham.dims)) + dressed_state(ham, lv1)) / math.sqrt(2)


def synthetic_r_vector(coefficients: Mapping[str, float], durations: Sequence[float]) -> RVectorTrace:
    """R-vector trace of a synthetic two-qubit generator under the echo."""
    norms, pairs = [], []
    for total in durations:
        u = synthetic_echo_unitary(coefficients, total / 2.0)
        vecs = []
        for c in (0, 1):
            psi = np.zeros(4, dtype=complex)
            psi[2 * c] = 1.0
            out = u @ psi
            vecs.append(np.array(bloch_from_density(reduced_density(out, (2, 2), [1]))[:3]))
        pairs.append(vecs)
        norms.append(r_norm(*vecs))
    return RVectorTrace(np.asarray(durations, dtype=float), np.array(norms), np.array(pairs))


@dataclass(frozen=True)
class EchoRabiTrace:
    times: np.ndarray  # ns of total CR drive
    bloch: np.ndarray  # (n, 2, 3) target Bloch vector for control 0 and 1
    frame_phases: np.ndarray  # target Z angle removed from the readout at each duration

    def rows(self) -> list[dict]:
        out = []
        for t, pair, ph in zip(self.times, self.bloch, self.frame_phases):
            for c, v in enumerate(pair):
                out.append({"time_ns": float(t), "control": c, "x": v[0], "y": v[1], "z": v[2], "frame_phase": float(ph)})
        return out


def echo_rabi(
    topology: DeviceTopology,
    echo: EchoSchedule,
    durations: Sequence[float],
    *,
    target: Optional[str] = None,
    model: str = "effective_qubits",
    dt: float = 0.1,
    frame_rate: float = 0.0,
    frame: str = "qubit",
) -> EchoRabiTrace:
    """Target Bloch vectors after the echo versus total CR duration, target starting in |0>.

    ``frame_rate`` (rad/ns) turns the target readout axes at a constant rate
    over the elapsed sequence time, e.g. :attr:`GateCalibration.target_frame_rate`
    to read in the frame that the gate's local Z correction defines.
    """
    target = target or echo.target
    if target is None:
        raise ValueError("target qubit required")
    out, phases = [], []
    for total in np.asarray(durations, dtype=float):
        e = build_echo_schedule(echo.drive, total / 2.0, target=target, pad=echo.pad, strict=False)
        u4 = echoed_gate_block(topology, e, target=target, model=model, dt=dt, frame=frame)
        theta = frame_rate * e.total_duration
        undo = np.kron(np.eye(2), np.diag([np.exp(0.5j * theta), np.exp(-0.5j * theta)]))
        pair = []
        for c in (0, 1):
            psi = undo @ u4[:, 2 * c]
            psi = psi / np.linalg.norm(psi)
            pair.append(bloch_from_density(reduced_density(psi, (2, 2), [1]))[:3])
        out.append(pair)
        phases.append(theta)
    return EchoRabiTrace(np.asarray(durations, dtype=float), np.array(out), np.array(phases))


def echo_amplitude_for_rotation(
    topology: DeviceTopology,
    drive: DriveSpec,
    target: str,
    cr_duration: float = 2 * GATE_HALF_DURATION,
    *,
    pad: float = GATE_PAD,
    model: str = "effective_qubits",
    dt: float = 0.1,
    amplitudes: Sequence[float] = tuple(np.arange(4.0, 80.0, 4.0)),
) -> float:
    """Drive amplitude (MHz) giving a pi/2 conditional rotation in ``cr_duration``.

    Solves <z>_0 + <z>_1 = 0 for the target after the echo, starting from the
    first sign change on the ``amplitudes`` grid.
    """
    control = drive.target_qubit
    ham = build_hamiltonian(topology, mode=model, frame="rotating_at_drive", frame_frequency=drive.frequency)
    frame = qubit_frame(ham)
    k = ham.mode(target)

    def zsum(amp):
        echo = build_echo_schedule(dataclasses.replace(drive, amplitude=float(amp)), cr_duration / 2, target=target, pad=pad)
        _, states = _echo_final_states(topology, echo, target, model, dt, [{control: 0}, {control: 1}], ham, frame)
        return sum(bloch_from_density(reduced_density(s, ham.dims, [k]))[2] for s in states)

    prev_a, prev_v = None, None
    for a in amplitudes:
        v = zsum(a)
        if prev_v is not None and np.sign(v) != np.sign(prev_v):
            return float(brentq(zsum, prev_a, a, xtol=1e-6))
        prev_a, prev_v = a, v
    raise SequenceError("no amplitude on the grid reaches a pi/2 conditional rotation")


def echoed_gate_block(
    topology: DeviceTopology,
    echo: EchoSchedule,
    *,
    target: Optional[str] = None,
    model: str = "effective_qubits",
    dt: float = 0.1,
    frame: str = "qubit",
) -> np.ndarray:
    """4x4 propagator of the echo on the dressed computational states.

    ``frame`` is "qubit" (each mode at its own dressed frequency) or "drive"
    (all modes at the drive frequency). Other modes start and end in their
    ground state; the block is not unitary when population leaks. Ordering
    is control⊗target.
    """
    target = target or echo.target
    res = propagate(topology, echo.schedule, "unitary", dt, model=model)
    ham = res.hamiltonian
    v = dressed_basis(ham)[1]
    if frame not in ("qubit", "drive"):
        raise ValueError(f"unknown frame {frame!r}")
    u = res.qubit_frame_propagator() if frame == "qubit" else res.propagator
    u = v.conj().T @ u @ v
    kc, kt = ham.mode(echo.control), ham.mode(target)
    idx = []
    for a, b in itertools.product((0, 1), repeat=2):
        lv = [0] * len(ham.dims)
        lv[kc], lv[kt] = a, b
        idx.append(basis_index(lv, ham.dims))
    return u[np.ix_(idx, idx)]


def pauli_generator(u4: np.ndarray) -> dict[str, float]:
    """Coefficients (rad) of ``exp(-i sum c_P P)`` closest to ``u4`` (polar part, det fixed to 1)."""
    block = polar(np.asarray(u4))[0]
    block = block / np.linalg.det(block) ** 0.25
    h = 1j * logm(block)
    return {p + q: float(np.real(np.trace(pauli_operator(p + q) @ h))) / 4 for p, q in itertools.product("IXYZ", repeat=2)}


@dataclass(frozen=True)
class GateCalibration:
    drive: DriveSpec
    echo: EchoSchedule
    phi0: float  # from the non-echoed phase sweep
    phase_trim: float  # extra phase that best refocuses the echoed gate
    fidelity: float  # locally corrected unitary fidelity of the computational block
    corrections: tuple[float, float]

    @property
    def target_frame_rate(self) -> float:
        """Target Z correction per ns of sequence (rad/ns)."""
        return self.corrections[1] / self.echo.total_duration


def calibrate_echo_gate(
    topology: DeviceTopology,
    control: str,
    target: str,
    *,
    amplitude_guess: float = 18.0,
    cr_duration: float = 2 * GATE_HALF_DURATION,
    pad: float = GATE_PAD,
    ramp: float = GATE_RAMP,
    model: str = "effective_qubits",
    dt: float = 0.1,
    iterations: int = 2,
    use_oracle: bool = True,
    trim_window: float = 0.6,
    frequency: Optional[float] = None,
) -> GateCalibration:
    """Tune drive phase and amplitude of the echoed gate towards exp(-i pi/4 ZX).

    The drive sits on the dressed target frequency. The phase starts from the
    ZY = 0, ZX > 0 point of a non-echoed sweep. Amplitude (pi/2 conditional
    rotation) and a small phase trim are then alternated; the trim maximizes
    the locally corrected fidelity of the echoed gate, which absorbs the ZY
    that the echo builds up from non-commuting IZ and IX terms.
    """
    freq = dressed_qubit_frequencies(topology, model)[target] if frequency is None else float(frequency)
    drive = DriveSpec(control, float(amplitude_guess), freq, ramp=ramp)
    phi0 = drive_phase_calibration(topology, drive, control, target, model=model, use_oracle=use_oracle).phi0
    half = cr_duration / 2.0

    def infidelity(delta):
        echo = build_echo_schedule(drive.with_phase(phi0 + delta), half, target=target, pad=pad)
        return 1.0 - corrected_unitary_fidelity(echoed_gate_block(topology, echo, model=model, dt=dt))[0]

    trim = 0.0
    for _ in range(iterations):
        amp = echo_amplitude_for_rotation(topology, drive.with_phase(phi0 + trim), target, cr_duration, pad=pad, model=model, dt=dt)
        drive = dataclasses.replace(drive, amplitude=amp)
        sol = minimize_scalar(infidelity, bounds=(trim - trim_window, trim + trim_window), method="bounded", options={"xatol": 1e-4})
        trim = float(sol.x)
    drive = drive.with_phase(phi0 + trim)
    echo = build_echo_schedule(drive, half, target=target, pad=pad)
    f, corr = corrected_unitary_fidelity(echoed_gate_block(topology, echo, model=model, dt=dt))
    return GateCalibration(drive, echo, phi0, trim, f, corr)


# --- Ramsey ZZ ------------------------------------------------------------


@dataclass(frozen=True)
class RamseyResult:
    xi_zz: float  # MHz, f(spectator=1) - f(spectator=0)
    frequencies: tuple[float, float]  # MHz, including the software detuning
    delays: np.ndarray
    signals: tuple[np.ndarray, np.ndarray]  # complex <x> + i<y>


def precession_frequency(delays: np.ndarray, signal: np.ndarray) -> float:
    """Frequency (MHz) of a complex precession ``A exp(-2 pi i f t)``, from the unwrapped phase slope."""
    phase = np.unwrap(np.angle(signal))
    w = np.abs(signal)
    if np.max(w) < 1e-6:
        raise SequenceError("Ramsey signal has vanished")
    slope, _ = np.polyfit(delays, phase, 1, w=w)
    return float(-slope / TWO_PI * 1e3)


def ramsey_zz(
    topology: DeviceTopology,
    probe: str,
    spectator: str,
    delays: Optional[Sequence[float]] = None,
    *,
    software_detuning: float = 2.0,
    model: str = "effective_qubits",
    excited_label: int = 1,
) -> RamseyResult:
    """ZZ shift from two Ramsey experiments on ``probe`` with ``spectator`` in |0> then |1>.

    A ``software_detuning`` (MHz) is added to both branches so each precesses
    visibly; it cancels in the difference. ``excited_label`` = 0 swaps the
    branch labels and so flips the sign.
    """
    delays = np.linspace(0, 2000, 401) if delays is None else np.asarray(delays, dtype=float)
    ham = build_hamiltonian(topology, mode=model, frame="rotating_at_drive", frame_frequency=topology.qubit(probe).omega_ge)
    frame = qubit_frame(ham, dressed=False)
    evals, evecs = np.linalg.eigh(ham.static)
    kp = ham.mode(probe)
    freqs, signals = [], []
    for level in (0, 1):
        lv = [0] * len(ham.dims)
        lv[ham.mode(spectator)] = level
        psi0 = product_state(ham.dims, lv)
        lv1 = list(lv)
        lv1[kp] = 1
        psi0 = (psi0 + product_state(ham.dims, lv1)) / math.sqrt(2)
        coeffs = evecs.conj().T @ psi0
        sig = []
        for t in delays:
            psi = frame.to_qubit_frame(evecs @ (np.exp(-1j * evals * t) * coeffs), t)
            x, y, _, _ = bloch_from_density(reduced_density(psi, ham.dims, [kp]))
            sig.append((x + 1j * y) * np.exp(-1j * TWO_PI * 1e-3 * software_detuning * t))
        sig = np.array(sig)
        signals.append(sig)
        freqs.append(precession_frequency(delays, sig))
    xi = freqs[1] - freqs[0]
    if excited_label == 0:
        xi = -xi
    return RamseyResult(xi, (freqs[0], freqs[1]), delays, (signals[0], signals[1]))


# --- spectator protocol ---------------------------------------------------

SPECTATOR_OPS = {"idle": None, "pi": math.pi, "pi/2": math.pi / 2}


@dataclass(frozen=True)
class SpectatorBatch:
    """One QPT batch: spectator preparation rotations and its group tag."""

    ops: tuple[tuple[str, str], ...]  # (spectator label, op)
    group: str  # "control" or "experimental"
    preparation: tuple[Rotation, ...]
    inputs: tuple[str, ...] = ()

    @property
    def label(self) -> str:
        active = [f"{op}:{q}" for q, op in self.ops if op != "idle"]
        return ",".join(active) if active else "idle"


def spectator_excitation_protocol(
    topology: Optional[DeviceTopology],
    base_qpt_inputs: Sequence[str],
    spectator_ops: Sequence[Mapping[str, str]],
) -> list[SpectatorBatch]:
    """One QPT batch per spectator-operation combination.

    Each entry of ``spectator_ops`` maps spectator labels to ``idle``, ``pi``
    or ``pi/2``; a pi/2 is a y rotation so the spectator sits on the equator.
    """
    batches = []
    for ops in spectator_ops:
        prep = []
        for q, op in ops.items():
            if op not in SPECTATOR_OPS:
                raise ValueError(f"unknown spectator op {op!r}")
            if topology is not None and q not in topology.labels:
                raise ValueError(f"unknown spectator {q!r}")
            angle = SPECTATOR_OPS[op]
            if angle is not None:
                prep.append(Rotation(q, "x" if op == "pi" else "y", angle))
        group = "control" if not prep else "experimental"
        batches.append(SpectatorBatch(tuple(sorted(ops.items())), group, tuple(prep), tuple(base_qpt_inputs)))
    return batches


@dataclass(frozen=True)
class OperationIndex:
    """A coupling configuration of the spectator study."""

    index: int
    region: str
    couplers: Mapping[str, float]  # coupler label -> frequency, GHz
    spectator_ops: tuple[Mapping[str, str], ...]
    xi_zz: Mapping[str, float] = field(default_factory=dict)  # spectator -> |xi| MHz

    def topology(self, base: DeviceTopology) -> DeviceTopology:
        topo = base
        for label, freq in self.couplers.items():
            idx = [c.label for c in base.couplers].index(label)
            topo = topo.replace_coupler(idx, omega=freq)
        return topo


def _ops_for(spectators: Sequence[str], pairs: bool = False) -> tuple[dict, ...]:
    ops = [{s: "idle" for s in spectators}]
    for s in spectators:
        for op in ("pi", "pi/2"):
            d = {x: "idle" for x in spectators}
            d[s] = op
            ops.append(d)
    if pairs:
        for op in ("pi", "pi/2"):
            ops.append({s: op for s in spectators})
    return tuple(ops)


def coupler_for_zz(
    topology: DeviceTopology,
    coupler_index: int,
    pair: tuple[str, str],
    xi_target: float,
    *,
    model: str = "effective_qubits",
    hi: float = 10.0,
) -> float:
    """Coupler frequency above the coupling-off point giving |xi_ZZ| = ``xi_target`` MHz on ``pair``."""
    lo = coupler_off_frequency(topology, coupler_index) + 1e-4

    def f(w):
        t = topology.replace_coupler(coupler_index, omega=w)
        return abs(static_zz_exact(t, pair, model)) - xi_target

    if f(lo) * f(hi) > 0:
        raise SequenceError(f"|xi| = {xi_target} MHz not reachable for coupler {coupler_index} in [{lo:.3f}, {hi}] GHz")
    return float(brentq(f, lo, hi, xtol=1e-7))


def spectator_operation_indices(
    topology: DeviceTopology,
    *,
    control_spectator: str = "Q1",
    target_spectator: str = "Q4",
    control_side_coupler: int = 0,
    target_side_coupler: int = 2,
    xi_region2: Sequence[float] = (0.1, 0.2, 0.3, 0.4),
    xi_region3: Sequence[float] = (0.1, 0.2, 0.4),
    xi_region4: Sequence[float] = (0.2, 0.4),
    model: str = "effective_qubits",
) -> list[OperationIndex]:
    """The ten coupling configurations: I (1), II (2-5), III (6-8), IV (9-10).

    "On" couplers are placed above the off point where the spectator-gate ZZ
    magnitude equals the listed values (MHz), so regions II and III can be
    compared at matched |xi|.
    "Off" couplers sit at the zero-coupling frequency.
    """
    labels = topology.labels
    c1 = topology.couplers[control_side_coupler].label
    c3 = topology.couplers[target_side_coupler].label
    ctrl_pair = (control_spectator, labels[labels.index(control_spectator) + 1])
    tgt_pair = (labels[labels.index(target_spectator) - 1], target_spectator)
    off1 = coupler_off_frequency(topology, control_side_coupler)
    off3 = coupler_off_frequency(topology, target_side_coupler)
    spec = (control_spectator, target_spectator)

    def on1(x):
        return coupler_for_zz(topology.replace_coupler(target_side_coupler, omega=off3), control_side_coupler, ctrl_pair, x, model=model)

    def on3(x):
        return coupler_for_zz(topology.replace_coupler(control_side_coupler, omega=off1), target_side_coupler, tgt_pair, x, model=model)

    out = [OperationIndex(1, "I", {c1: off1, c3: off3}, _ops_for(spec), {control_spectator: 0.0, target_spectator: 0.0})]
    i = 2
    for x in xi_region2:
        out.append(OperationIndex(i, "II", {c1: on1(x), c3: off3}, _ops_for([control_spectator]), {control_spectator: x}))
        i += 1
    for x in xi_region3:
        out.append(OperationIndex(i, "III", {c1: off1, c3: on3(x)}, _ops_for([target_spectator]), {target_spectator: x}))
        i += 1
    for x in xi_region4:
        out.append(
            OperationIndex(i, "IV", {c1: on1(x), c3: on3(x)}, _ops_for(spec, pairs=True), {control_spectator: x, target_spectator: x})
        )
        i += 1
    return out


# --- spectator study ------------------------------------------------------


@dataclass(frozen=True)
class SpectatorResult:
    index: int
    region: str
    batch: str  # e.g. "pi:Q4" or "idle"
    xi_zz: float  # MHz, largest |xi| among excited spectators
    fidelity: float
    relative_error: float  # F_control - F_exp, 0 for the control batch
    corrections: tuple[float, float]


def run_spectator_study(
    topology: DeviceTopology,
    calibration: GateCalibration,
    indices: Sequence[OperationIndex],
    *,
    model: str = "effective_qubits",
    dt: float = 0.04,
    shots: Optional[int] = None,
    seed: int = 0,
) -> list[SpectatorResult]:
    """Gate QPT under every spectator batch of every operation index.

    The gate reuses the isolated-pair calibration, with the drive moved to the
    dressed target frequency of each configuration. The control batch fixes
    the local Z corrections; experimental batches are scored with the same
    corrections, so spectator-induced phases count as errors.
    """
    from .qpt import ideal_gate_chi, mle_project, reconstruct_chi, relative_gate_error, run_qpt

    control, target = calibration.echo.control, calibration.echo.target
    out = []
    for k, oi in enumerate(indices):
        topo = oi.topology(topology)
        freq = dressed_qubit_frequencies(topo, model)[target]
        drive = dataclasses.replace(calibration.drive, frequency=freq)
        echo = build_echo_schedule(drive, calibration.echo.cr_half_duration, target=target, pad=calibration.echo.pad)
        sched = echo.schedule
        evo = propagate(topo, sched, "unitary", dt, model=model, initial_state=None)
        batches = spectator_excitation_protocol(topo, (), oi.spectator_ops)
        chis = {}
        for b in batches:
            ds = run_qpt(topo, sched, (control, target), shots, seed + 1000 * k, dt=dt, model=model,
                         spectator_prep=b.preparation, evolution=evo)
            chis[b.label] = (b, mle_project(reconstruct_chi(ds)))
        ctrl = [v for v in chis.values() if v[0].group == "control"]
        if len(ctrl) != 1:
            raise SequenceError(f"index {oi.index}: expected one control batch, got {len(ctrl)}")
        ref = ideal_gate_chi(chi_exp=ctrl[0][1])
        for label, (b, chi) in chis.items():
            f = ideal_gate_chi(ref.corrections, chi).fidelity
            excited = [q for q, op in b.ops if op != "idle"]
            xi = max((oi.xi_zz.get(q, 0.0) for q in excited), default=0.0)
            err = 0.0 if b.group == "control" else relative_gate_error(ref.fidelity, f)
            out.append(SpectatorResult(oi.index, oi.region, label, float(xi), float(f), float(err), ref.corrections))
    return out


def index_errors(results: Iterable[SpectatorResult]) -> dict[tuple[int, str], tuple[str, float, float]]:
    """Largest relative error per (index, op) with op in {"pi", "pi/2"}.

    Values are ``(region, |xi| MHz, error)``; the control batch is skipped.
    """
    out: dict[tuple[int, str], tuple[str, float, float]] = {}
    for r in results:
        if r.batch == "idle":
            continue
        ops = {part.split(":")[0] for part in r.batch.split(",")}
        if len(ops) != 1:
            raise ValueError(f"mixed spectator ops in batch {r.batch!r}")
        key = (r.index, ops.pop())
        prev = out.get(key)
        if prev is None or r.relative_error > prev[2]:
            out[key] = (r.region, r.xi_zz, r.relative_error)
    return out
