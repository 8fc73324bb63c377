"""Time-domain propagation, projections, readout sampling and the generator oracle.

Propagation runs in the frame rotating at the drive frequency. Single-qubit
rotations and all reported observables refer to each qubit's own frame,
rotating at its dressed (drive-off) transition frequency; ``QubitFrame``
converts between the two.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
import weakref
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.linalg import expm, logm, polar
from scipy.optimize import linear_sum_assignment

from .analytics import label_eigenstates
from .device import (
    DeviceTopology,
    DriveSpec,
    Hamiltonian,
    basis_index,
    basis_levels,
    build_hamiltonian,
    embed,
    envelope_value,
)
from .units import mhz_to_rad, rad_to_ghz, rad_to_mhz, us_to_ns

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class StepSizeError(ValueError):
    pass


class DecoherenceError(ValueError):
    pass


class BranchError(RuntimeError):
    pass


# --- schedules ------------------------------------------------------------


@dataclass(frozen=True)
class DriveSegment:
    drive: DriveSpec
    duration: float  # ns

    def __post_init__(self):
        if not self.duration >= 0:
            raise ValueError(f"segment duration must be >= 0, got {self.duration}")


@dataclass(frozen=True)
class Delay:
    duration: float  # ns

    def __post_init__(self):
        if not self.duration >= 0:
            raise ValueError(f"delay must be >= 0, got {self.duration}")


@dataclass(frozen=True)
class Rotation:
    """Instantaneous rotation of a qubit's 0-1 subspace, axis in its own frame."""

    qubit: str
    axis: str
    angle: float

    def __post_init__(self):
        if self.axis not in ("x", "y", "z"):
            raise ValueError(f"rotation axis must be x, y or z, got {self.axis!r}")

    duration = 0.0


Segment = Union[DriveSegment, Delay, Rotation]


@dataclass(frozen=True)
class PulseSchedule:
    segments: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def total_duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def __add__(self, other: "PulseSchedule") -> "PulseSchedule":
        return PulseSchedule(self.segments + other.segments)

    def drive_frequency(self) -> Optional[float]:
        freqs = {s.drive.frequency for s in self.segments if isinstance(s, DriveSegment)}
        if len(freqs) > 1:
            raise ValueError(f"all drive segments must share one frequency, got {sorted(freqs)}")
        return freqs.pop() if freqs else None

    def table(self) -> list[dict]:
        """Ordered segment table for debugging and export."""
        rows, t = [], 0.0
        for seg in self.segments:
            row = {"start_ns": t, "duration_ns": seg.duration, "kind": type(seg).__name__}
            if isinstance(seg, DriveSegment):
                d = seg.drive
                row.update(qubit=d.target_qubit, amplitude_mhz=d.amplitude, frequency_ghz=d.frequency, phase=d.phase, ramp_ns=d.ramp)
            elif isinstance(seg, Rotation):
                row.update(qubit=seg.qubit, axis=seg.axis, angle=seg.angle)
            rows.append(row)
            t += seg.duration
        return rows


# --- frames ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QubitFrame:
    """Per-mode offsets (rad/ns) of each mode's own frame from the drive frame.

    Without ``basis`` the frame is diagonal in product states. With the
    dressed eigenvectors as ``basis`` it is F(t) = V exp(i D t) V^dagger,
    so dressed states pick up exactly the phases of their bare labels.
    """

    offsets: np.ndarray
    dims: tuple[int, ...]
    basis: Optional[np.ndarray] = None

    @cached_property
    def _basis_rates(self) -> np.ndarray:
        occ = np.indices(self.dims).reshape(len(self.dims), -1)
        return self.offsets @ occ

    def phases(self, t: float) -> np.ndarray:
        """Diagonal of exp(i sum_k offset_k n_k t) in the frame's own basis."""
        return np.exp(1j * self._basis_rates * t)

    def operator(self, t: float) -> np.ndarray:
        f = self.phases(t)
        if self.basis is None:
            return np.diag(f)
        return (self.basis * f[None, :]) @ self.basis.conj().T

    def to_qubit_frame(self, op: np.ndarray, t: float) -> np.ndarray:
        if self.basis is not None:
            f = self.operator(t)
            return f @ op if op.ndim == 1 else f @ op @ f.conj().T
        f = self.phases(t)
        if op.ndim == 1:
            return f * op
        return f[:, None] * op * f.conj()[None, :]

    def propagator_to_qubit_frame(self, u: np.ndarray, t: float) -> np.ndarray:
        if self.basis is not None:
            return self.operator(t) @ u
        return self.phases(t)[:, None] * u

    def rotation_in_drive_frame(self, r: np.ndarray, t: float) -> np.ndarray:
        if self.basis is not None:
            f = self.operator(t)
            return f.conj().T @ r @ f
        f = self.phases(t)
        return f.conj()[:, None] * r * f[None, :]


_DRESSED_CACHE: "weakref.WeakKeyDictionary[Hamiltonian, tuple]" = weakref.WeakKeyDictionary()


def dressed_basis(ham: Hamiltonian) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Drive-off eigenbasis labelled by bare states: ``(energies, vectors, overlaps)``.

    Column ``k`` of ``vectors`` is the dressed partner of bare state ``k`` with
    its bare amplitude made real and positive. A total-excitation offset is
    added before diagonalising so that rotating-frame degeneracies between
    different excitation manifolds cannot mix.
    """
    cached = _DRESSED_CACHE.get(ham)
    if cached is not None:
        return cached
    n_tot = np.array([sum(basis_levels(i, ham.dims)) for i in range(ham.dim)], dtype=float)
    h = ham.static
    conserving = np.allclose(n_tot[:, None] * h, h * n_tot[None, :], atol=1e-12)
    shift = 4.0 * (float(np.max(np.abs(np.diag(h)))) + 1.0) if conserving else 0.0
    energies, vecs, overlaps = label_eigenstates(h + np.diag(shift * n_tot))
    energies = energies - shift * n_tot
    diag = np.diagonal(vecs)
    phase = np.where(np.abs(diag) > 0, diag / np.maximum(np.abs(diag), 1e-300), 1.0)
    vecs = vecs * phase.conj()[None, :]
    out = (energies, vecs, overlaps)
    _DRESSED_CACHE[ham] = out
    return out


def qubit_frame(ham: Hamiltonian, dressed: bool = True) -> QubitFrame:
    """Frame offsets from the dressed single-excitation energies of ``ham.static``.

    ``dressed`` makes the frame act on the drive-off eigenstates instead of
    product states.
    """
    energies, vecs, overlaps = dressed_basis(ham)
    occ_ground = [0] * len(ham.dims)
    e0 = energies[basis_index(occ_ground, ham.dims)]
    offsets = []
    for k in range(len(ham.dims)):
        lv = list(occ_ground)
        lv[k] = 1
        idx = basis_index(lv, ham.dims)
        if overlaps[idx] > 0.5:
            offsets.append(energies[idx] - e0)
        else:
            offsets.append(np.real(ham.static[idx, idx] - ham.static[0, 0]))
    return QubitFrame(np.array(offsets, dtype=float), ham.dims, vecs if dressed else None)


def rotation_operator(ham: Hamiltonian, qubit: str, axis: str, angle: float, basis: str = "dressed") -> np.ndarray:
    """exp(-i angle/2 sigma_axis) on the 0-1 levels of ``qubit``; higher levels untouched.

    With ``basis="dressed"`` the rotation acts on the drive-off eigenstates,
    which is what a calibrated pulse addresses; ``"bare"`` uses product states.
    """
    d = ham.dims[ham.mode(qubit)]
    local = np.eye(d, dtype=complex)
    local[:2, :2] = expm(-0.5j * angle * PAULI[axis.upper()])
    r = embed(local, ham.mode(qubit), ham.dims)
    if basis == "bare":
        return r
    if basis != "dressed":
        raise ValueError(f"unknown basis {basis!r}")
    v = dressed_basis(ham)[1]
    return v @ r @ v.conj().T


# --- propagation ----------------------------------------------------------


def hermitian_expm(h: np.ndarray, tau: float) -> np.ndarray:
    evals, evecs = np.linalg.eigh(h)
    return (evecs * np.exp(-1j * evals * tau)) @ evecs.conj().T


def max_energy_scale(ham: Hamiltonian, amplitude_rad: float = 0.0) -> float:
    """Largest diagonal energy relative to the ground entry plus drive, in GHz."""
    diag = np.real(np.diag(ham.static))
    return rad_to_ghz(float(np.max(np.abs(diag - diag[0]))) + amplitude_rad)


@dataclass(frozen=True)
class _Piece:
    start: float
    duration: float
    h: Optional[np.ndarray] = None  # constant Hamiltonian, None for rotations
    unitary: Optional[np.ndarray] = None  # instantaneous op (drive frame)
    time_dependent: bool = False


@dataclass(eq=False)
class EvolutionResult:
    """Outcome of :func:`propagate`.

    ``propagator`` (unitary mode) and ``state`` are in the drive frame; use
    :meth:`qubit_frame_propagator` / :meth:`qubit_frame_state` for observables.
    ``samples`` holds the (drive-frame) state at each of ``sample_times``.
    """

    mode: str
    dims: tuple[int, ...]
    labels: tuple[str, ...]
    frame: QubitFrame
    total_duration: float
    frame_frequency: float  # GHz
    propagator: Optional[np.ndarray] = None
    state: Optional[np.ndarray] = None
    sample_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    samples: list = field(default_factory=list)
    hamiltonian: Optional[Hamiltonian] = None
    observables: list = field(default_factory=list)

    def qubit_frame_propagator(self) -> np.ndarray:
        return self.frame.propagator_to_qubit_frame(self.propagator, self.total_duration)

    def qubit_frame_state(self) -> np.ndarray:
        return self.frame.to_qubit_frame(self.state, self.total_duration)

    def qubit_frame_samples(self) -> list:
        return [self.frame.to_qubit_frame(s, t) for s, t in zip(self.samples, self.sample_times)]


def product_state(dims: Sequence[int], levels: Sequence[int]) -> np.ndarray:
    psi = np.zeros(int(np.prod(dims)), dtype=complex)
    psi[basis_index(levels, dims)] = 1.0
    return psi


def dressed_state(ham: Hamiltonian, levels: Sequence[int]) -> np.ndarray:
    """Drive-off eigenstate whose bare label is ``levels``."""
    return dressed_basis(ham)[1][:, basis_index(levels, ham.dims)].copy()


def prepare_levels(ham: Hamiltonian, prep: Mapping[str, int]) -> list[int]:
    levels = [0] * len(ham.dims)
    for label, level in prep.items():
        levels[ham.mode(label)] = int(level)
    return levels


def _local_channel(d: int, t1_ns: float, tphi_ns: float, dt: float) -> np.ndarray:
    """Amplitude damping + pure dephasing on one mode over ``dt``, as a d^2 x d^2 superoperator (row-major vec)."""
    a = np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1).astype(complex)
    n = a.conj().T @ a
    ops = []
    if math.isfinite(t1_ns):
        ops.append(math.sqrt(1.0 / t1_ns) * a)
    if math.isfinite(tphi_ns):
        ops.append(math.sqrt(2.0 / tphi_ns) * n)
    eye = np.eye(d)
    gen = np.zeros((d * d, d * d), dtype=complex)
    for c in ops:
        cdc = c.conj().T @ c
        gen += np.kron(c, c.conj()) - 0.5 * (np.kron(cdc, eye) + np.kron(eye, cdc.T))
    return expm(gen * dt)


def _apply_local_superop(rho: np.ndarray, sup: np.ndarray, k: int, dims: tuple[int, ...]) -> np.ndarray:
    n = len(dims)
    d = dims[k]
    r = rho.reshape(dims + dims)
    e = sup.reshape(d, d, d, d)
    out = np.tensordot(e, r, axes=([2, 3], [k, n + k]))
    out = np.moveaxis(out, [0, 1], [k, n + k])
    return out.reshape(rho.shape)


def _coherence_ns(topology: DeviceTopology, ham: Hamiltonian, coherence: Optional[Mapping]) -> dict[int, tuple[float, float]]:
    rates = {}
    for q in topology.qubits:
        if q.label not in ham.labels:
            continue
        t1, t2 = (coherence or {}).get(q.label, (q.t1, q.t2))
        if t1 is None or t2 is None:
            raise DecoherenceError(f"dissipative mode needs t1 and t2 for {q.label}")
        t1n, t2n = us_to_ns(t1), us_to_ns(t2)
        inv_tphi = 1.0 / t2n - 0.5 / t1n
        if inv_tphi < -1e-15:
            raise DecoherenceError(f"{q.label}: T2 > 2 T1 gives negative pure-dephasing rate")
        tphi = math.inf if inv_tphi <= 0 else 1.0 / inv_tphi
        rates[ham.mode(q.label)] = (t1n, tphi)
    return rates


def build_frame_hamiltonian(
    topology: DeviceTopology,
    schedule: PulseSchedule,
    model: str = "effective_qubits",
    frame_frequency: Optional[float] = None,
) -> Hamiltonian:
    """Static rotating-frame Hamiltonian for ``schedule`` (frame at its drive frequency)."""
    wd = schedule.drive_frequency()
    if wd is None:
        wd = frame_frequency if frame_frequency is not None else float(np.mean([q.omega_ge for q in topology.qubits]))
    return build_hamiltonian(topology, mode=model, frame="rotating_at_drive", frame_frequency=wd)


def _pieces(ham: Hamiltonian, frame: QubitFrame, schedule: PulseSchedule, dt: float) -> list[_Piece]:
    pieces, t = [], 0.0
    for seg in schedule.segments:
        if isinstance(seg, Rotation):
            r = rotation_operator(ham, seg.qubit, seg.axis, seg.angle)
            pieces.append(_Piece(t, 0.0, unitary=frame.rotation_in_drive_frame(r, t)))
            continue
        if seg.duration == 0:
            continue
        if isinstance(seg, Delay) or seg.drive.amplitude == 0:
            pieces.append(_Piece(t, seg.duration, h=ham.static))
            t += seg.duration
            continue
        drv = seg.drive
        a = ham.lowering(drv.target_qubit)
        op = 0.5 * mhz_to_rad(drv.amplitude) * (np.exp(1j * drv.phase) * a + np.exp(-1j * drv.phase) * a.conj().T)
        T = seg.duration
        r = 0.0 if drv.ramp <= 0 else min(drv.ramp, T / 2.0)
        if r > 0:
            n = max(1, math.ceil(r / dt - 1e-9))
            h_step = r / n
            for i in range(n):
                tau = (i + 0.5) * h_step
                pieces.append(_Piece(t + i * h_step, h_step, h=ham.static + envelope_value(tau, T, drv.ramp) * op, time_dependent=True))
        if T - 2 * r > 0:
            pieces.append(_Piece(t + r, T - 2 * r, h=ham.static + op))
        if r > 0:
            for i in range(n):
                tau = T - r + (i + 0.5) * h_step
                pieces.append(_Piece(t + T - r + i * h_step, h_step, h=ham.static + envelope_value(tau, T, drv.ramp) * op, time_dependent=True))
        t += T
    return pieces


def propagate(
    topology: DeviceTopology,
    schedule: PulseSchedule,
    mode: str = "unitary",
    dt: float = 0.05,
    *,
    model: str = "effective_qubits",
    initial_state: Optional[np.ndarray] = None,
    sample_times: Optional[Sequence[float]] = None,
    frame_frequency: Optional[float] = None,
    coherence: Optional[Mapping[str, tuple[float, float]]] = None,
    ham: Optional[Hamiltonian] = None,
    frame: Optional[QubitFrame] = None,
) -> EvolutionResult:
    """Propagate ``schedule`` with piecewise-constant Hamiltonians.

    Constant stretches are exponentiated exactly; cosine ramps are sampled at
    their midpoints every ``dt`` ns. In ``dissipative`` mode the density matrix
    takes a Hamiltonian step followed by per-qubit amplitude-damping and
    pure-dephasing channels every ``dt``.
    """
    if mode not in ("unitary", "dissipative"):
        raise ValueError(f"unknown propagation mode {mode!r}")
    if ham is None:
        ham = build_frame_hamiltonian(topology, schedule, model, frame_frequency)
    if frame is None:
        frame = qubit_frame(ham)
    amp = max((mhz_to_rad(s.drive.amplitude) for s in schedule.segments if isinstance(s, DriveSegment)), default=0.0)
    limit = 1.0 / (20.0 * max(max_energy_scale(ham, amp), 1e-12))
    if dt > limit:
        raise StepSizeError(f"dt = {dt} ns exceeds 1/(20 E_max) = {limit:.4g} ns")
    pieces = _pieces(ham, frame, schedule, dt)
    total = schedule.total_duration
    samples_t = np.sort(np.asarray(sample_times if sample_times is not None else [], dtype=float))
    if len(samples_t) and (samples_t[0] < 0 or samples_t[-1] > total + 1e-9):
        raise ValueError("sample times must lie within the schedule")

    dim = ham.dim
    if mode == "unitary":
        if initial_state is None:
            current = np.eye(dim, dtype=complex)
        else:
            current = np.asarray(initial_state, dtype=complex)
        evolve_op = lambda u, x: u @ x  # noqa: E731
    else:
        if initial_state is None:
            raise ValueError("dissipative mode needs an initial state")
        psi = np.asarray(initial_state, dtype=complex)
        current = np.outer(psi, psi.conj()) if psi.ndim == 1 else psi.copy()
        rates = _coherence_ns(topology, ham, coherence)
        channel_cache: dict[float, dict] = {}

        def channels(step):
            key = round(step, 12)
            if key not in channel_cache:
                channel_cache[key] = {k: _local_channel(ham.dims[k], t1, tphi, step) for k, (t1, tphi) in rates.items()}
            return channel_cache[key]

        def evolve_op(u, rho):
            return u @ rho @ u.conj().T

    samples = []
    si = 0

    def advance(state, h, tau):
        if mode == "unitary":
            return hermitian_expm(h, tau) @ state
        n = max(1, math.ceil(tau / dt - 1e-9))
        step = tau / n
        u = hermitian_expm(h, step)
        chans = channels(step)
        for _ in range(n):
            state = u @ state @ u.conj().T
            for k, sup in chans.items():
                state = _apply_local_superop(state, sup, k, ham.dims)
        return state

    for piece in pieces:
        if piece.unitary is not None:
            current = evolve_op(piece.unitary, current)
            continue
        end = piece.start + piece.duration
        local_t = piece.start
        while si < len(samples_t) and samples_t[si] <= end + 1e-12:
            tau = samples_t[si] - local_t
            if tau > 0:
                current = advance(current, piece.h, tau)
                local_t = samples_t[si]
            samples.append(current.copy())
            si += 1
        if end - local_t > 0:
            current = advance(current, piece.h, end - local_t)
    while si < len(samples_t):
        samples.append(current.copy())
        si += 1

    result = EvolutionResult(
        mode=mode,
        dims=ham.dims,
        labels=ham.labels,
        frame=frame,
        total_duration=total,
        frame_frequency=rad_to_ghz(ham.frame_frequency),
        sample_times=samples_t,
        samples=samples,
        hamiltonian=ham,
    )
    if mode == "unitary" and initial_state is None:
        result.propagator = current
    else:
        result.state = current
    return result


# --- projections ----------------------------------------------------------


@dataclass(frozen=True)
class ProjectionSeries:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    leakage: np.ndarray
    subspace_label: str = ""
    leakage_flag: bool = False

    @property
    def vectors(self) -> np.ndarray:
        return np.stack([self.x, self.y, self.z], axis=1)

    def rows(self) -> list[dict]:
        return [
            {"subspace": self.subspace_label, "time_ns": t, "exp_x": a, "exp_y": b, "exp_z": c, "leakage": lk}
            for t, a, b, c, lk in zip(self.times, self.x, self.y, self.z, self.leakage)
        ]


def reduced_density(state: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Partial trace of a pure state or density matrix onto modes ``keep`` (in the given order)."""
    n = len(dims)
    keep = list(keep)
    rest = [i for i in range(n) if i not in keep]
    dk = int(np.prod([dims[i] for i in keep]))
    if state.ndim == 1:
        psi = state.reshape(dims).transpose(keep + rest).reshape(dk, -1)
        return psi @ psi.conj().T
    rho = state.reshape(tuple(dims) + tuple(dims))
    perm = keep + rest
    rho = rho.transpose(perm + [n + i for i in perm])
    dr = int(np.prod([dims[i] for i in rest])) if rest else 1
    rho = rho.reshape(dk, dr, dk, dr)
    return np.einsum("ajbj->ab", rho)


def bloch_from_density(rho_q: np.ndarray) -> tuple[float, float, float, float]:
    """(x, y, z, leakage) of a single mode, renormalized to its 0-1 block."""
    block = rho_q[:2, :2]
    p = float(np.real(np.trace(block)))
    leak = max(0.0, 1.0 - p)
    if p <= 1e-15:
        return 0.0, 0.0, 0.0, leak
    vals = [float(np.real(np.trace(block @ PAULI[s]))) / p for s in "XYZ"]
    return vals[0], vals[1], vals[2], leak


def measure_target_projections(
    result: EvolutionResult,
    target: str,
    prep: Optional[Mapping[str, int]] = None,
    leakage_threshold: float = 0.05,
) -> ProjectionSeries:
    """Target-qubit Bloch components at each sample time, in the target's own frame."""
    k = result.labels.index(target)
    xs, ys, zs, ls = [], [], [], []
    for state in result.qubit_frame_samples():
        rho = reduced_density(state, result.dims, [k])
        x, y, z, lk = bloch_from_density(rho)
        xs.append(x)
        ys.append(y)
        zs.append(z)
        ls.append(lk)
    label = "".join(str(v) for _, v in sorted((prep or {}).items(), key=lambda kv: result.labels.index(kv[0])))
    leak = np.array(ls)
    return ProjectionSeries(
        times=np.asarray(result.sample_times, dtype=float),
        x=np.array(xs),
        y=np.array(ys),
        z=np.array(zs),
        leakage=leak,
        subspace_label=label,
        leakage_flag=bool(np.any(leak > leakage_threshold)),
    )


# --- readout --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReadoutModel:
    """Per-qubit confusion matrices, rows = true state, columns = reported."""

    confusion: tuple[np.ndarray, ...]

    def __post_init__(self):
        mats = tuple(np.asarray(m, dtype=float) for m in self.confusion)
        for m in mats:
            if m.shape != (2, 2) or not np.allclose(m.sum(axis=1), 1.0, atol=1e-12):
                raise ValueError("confusion matrices must be 2x2 with rows summing to 1")
            if np.any(np.diag(m) < 0.5):
                raise ValueError("confusion diagonal must be >= 0.5")
        object.__setattr__(self, "confusion", mats)

    @classmethod
    def from_fidelities(cls, pairs: Sequence[tuple[float, float]]) -> "ReadoutModel":
        return cls(tuple(np.array([[fg, 1 - fg], [1 - fe, fe]]) for fg, fe in pairs))

    @classmethod
    def from_topology(cls, topology: DeviceTopology, labels: Sequence[str]) -> "ReadoutModel":
        pairs = []
        for lb in labels:
            q = topology.qubit(lb)
            pairs.append((q.readout_fid_g or 1.0, q.readout_fid_e or 1.0))
        return cls.from_fidelities(pairs)

    @classmethod
    def perfect(cls, n: int) -> "ReadoutModel":
        return cls(tuple(np.eye(2) for _ in range(n)))

    @property
    def n_qubits(self) -> int:
        return len(self.confusion)

    @cached_property
    def matrix(self) -> np.ndarray:
        out = np.ones((1, 1))
        for m in self.confusion:
            out = np.kron(out, m)
        return out


def bitstrings(n: int) -> list[str]:
    return ["".join(b) for b in itertools.product("01", repeat=n)]


def computational_probabilities(state: np.ndarray, dims: Sequence[int], modes: Sequence[int]) -> np.ndarray:
    """Probabilities of the 2^n readout outcomes of ``modes``; levels >= 1 read as 1."""
    rho = reduced_density(state, dims, list(modes))
    pops = np.real(np.diag(rho))
    sub = [dims[m] for m in modes]
    out = np.zeros(2 ** len(modes))
    for idx, p in enumerate(pops):
        levels = np.unravel_index(idx, sub)
        bits = [min(1, int(v)) for v in levels]
        out[int("".join(map(str, bits)), 2)] += p
    return np.clip(out, 0, None) / max(out.sum(), 1e-300)


def sample_shots(probabilities: np.ndarray, readout: ReadoutModel, n_shots: int, seed: int) -> dict[str, int]:
    """Multinomial counts after pushing ideal probabilities through the confusion maps."""
    if n_shots <= 0:
        raise ValueError("n_shots must be positive")
    p = np.asarray(probabilities, dtype=float)
    reported = readout.matrix.T @ p
    reported = np.clip(reported, 0, None)
    reported /= reported.sum()
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(n_shots, reported)
    return dict(zip(bitstrings(readout.n_qubits), (int(c) for c in counts)))


@dataclass(frozen=True)
class CorrectedDistribution:
    probabilities: np.ndarray
    residual: float  # negative mass removed by clipping

    def __iter__(self):
        return iter((self.probabilities, self.residual))


def bayes_correct(counts: Mapping[str, int], readout: ReadoutModel) -> CorrectedDistribution:
    """Invert the tensor-product confusion map, clip negatives and renormalize."""
    keys = bitstrings(readout.n_qubits)
    measured = np.array([counts.get(k, 0) for k in keys], dtype=float)
    total = measured.sum()
    if total <= 0:
        raise ValueError("counts are empty")
    measured /= total
    a = readout.matrix
    if abs(np.linalg.det(a)) < 1e-12:
        raise np.linalg.LinAlgError("confusion matrix is singular")
    raw = np.linalg.solve(a.T, measured)
    residual = float(-raw[raw < 0].sum())
    clipped = np.clip(raw, 0, None)
    return CorrectedDistribution(clipped / clipped.sum(), residual)


# --- generator oracle -----------------------------------------------------


@dataclass(frozen=True)
class GeneratorTriple:
    omega_x: float  # MHz
    omega_y: float  # MHz
    delta: float  # MHz
    energy: float = 0.0  # MHz, block mean (for ZI-type bookkeeping)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.omega_x, self.omega_y, self.delta)


def triple_from_generator(h2: np.ndarray) -> GeneratorTriple:
    """Decompose a 2x2 Hermitian H = e + (Ox X + Oy Y - D Z)/2 (rad/ns) into MHz."""
    ox = 2.0 * np.real(h2[0, 1])
    oy = -2.0 * np.imag(h2[0, 1])
    delta = np.real(h2[1, 1] - h2[0, 0])
    energy = 0.5 * np.real(h2[0, 0] + h2[1, 1])
    return GeneratorTriple(rad_to_mhz(ox), rad_to_mhz(oy), rad_to_mhz(delta), rad_to_mhz(energy))


def _block_states(ham: Hamiltonian, target: str, prep: Mapping[str, int]) -> tuple[int, int]:
    levels = prepare_levels(ham, prep)
    k = ham.mode(target)
    lv0, lv1 = list(levels), list(levels)
    lv0[k], lv1[k] = 0, 1
    return basis_index(lv0, ham.dims), basis_index(lv1, ham.dims)


def _su2_log(u: np.ndarray, t: float) -> Optional[np.ndarray]:
    """Traceless generator of a 2x2 unitary block.

    The overall phase leaves a sign ambiguity between ``su`` and ``-su``,
    whose eigenphases are +-theta and +-(pi - theta). The branch with the
    smaller phase is taken; None is returned when both lie within
    0.05 pi of pi/2 and the choice is unsafe.
    """
    su = u / np.sqrt(np.linalg.det(u))
    theta = float(np.max(np.abs(np.angle(np.linalg.eigvals(su)))))
    if abs(theta - 0.5 * np.pi) < 0.05 * np.pi:
        return None
    if theta > 0.5 * np.pi:
        su = -su
    gen = 1j * logm(su) / t
    return 0.5 * (gen + gen.conj().T)


def _dressed_blocks(h: np.ndarray, dims: tuple[int, ...], k: int):
    """Eigenvalues, eigenvectors and a block-respecting eigenvector assignment.

    Bare states sharing every occupation except a 0/1 level of mode ``k``
    form two-state blocks; all other states are singletons. Eigenvectors are
    assigned to blocks by maximizing total in-block weight.
    """
    evals, evecs = np.linalg.eigh(h)
    weight = np.abs(evecs) ** 2
    occ = np.indices(dims).reshape(len(dims), -1).T
    block_of, blocks = {}, []
    for idx, lv in enumerate(occ):
        key = tuple(int(v) for i, v in enumerate(lv) if i != k) + ((int(lv[k]),) if lv[k] > 1 else ("q",))
        if key not in block_of:
            block_of[key] = len(blocks)
            blocks.append([])
        blocks[block_of[key]].append(idx)
    slots, block_weight = [], []
    for b, members in enumerate(blocks):
        w = weight[members].sum(axis=0)
        for _ in members:
            slots.append(b)
            block_weight.append(w)
    rows, cols = linear_sum_assignment(-np.array(block_weight))
    assigned = {}
    for r, c in zip(rows, cols):
        assigned.setdefault(slots[r], []).append(c)
    return evals, evecs, blocks, assigned


def effective_generator_oracle(
    topology: DeviceTopology,
    drive: DriveSpec,
    target: str,
    subspace_preps: Sequence[Mapping[str, int]],
    t_probe: float = 100.0,
    *,
    model: str = "effective_qubits",
    frame: str = "dressed",
    max_retries: int = 5,
) -> dict[str, GeneratorTriple]:
    """Brute-force per-subspace target generator under a constant drive.

    For every preparation of the non-target qubits, U(t_probe) is formed on
    the two-state block {|prep, 0_t>, |prep, 1_t>}, unitarized by polar
    decomposition, and ``i log(U) / t_probe`` is decomposed over X, Y, Z.
    With ``frame="dressed"`` the block is taken after removing the static
    drive dressing: the eigenvectors assigned to the block are restricted to
    it and orthonormalized by polar decomposition, which block-diagonalizes
    H with the least rotation. ``frame="bare"`` uses the bare product-state
    block of U directly. Results refer to each qubit's own frame, like
    :func:`measure_target_projections`.
    """
    constant = dataclasses.replace(drive, ramp=0.0)
    ham = build_hamiltonian(topology, mode=model, drive=constant, frame="rotating_at_drive")
    offsets = qubit_frame(build_hamiltonian(topology, mode=model, frame="rotating_at_drive", frame_frequency=drive.frequency)).offsets
    h = ham(0.0)
    k = ham.mode(target)
    if frame == "dressed":
        evals, evecs, blocks, assigned = _dressed_blocks(h, ham.dims, k)
        block_index = {tuple(sorted(m)): b for b, m in enumerate(blocks)}
    elif frame != "bare":
        raise ValueError(f"unknown oracle frame {frame!r}")
    out = {}
    for prep in subspace_preps:
        i0, i1 = _block_states(ham, target, prep)
        levels = prepare_levels(ham, prep)
        label = "".join(str(v) for _, v in sorted(prep.items(), key=lambda kv: ham.mode(kv[0])))
        if frame == "dressed":
            cols = assigned[block_index[tuple(sorted((i0, i1)))]]
            w, _ = polar(evecs[[i0, i1]][:, cols])
            energy = float(np.mean(evals[cols]))
        else:
            energy = None
        if frame == "dressed":
            split = abs(evals[cols[1]] - evals[cols[0]])
        else:
            split = float(np.ptp(np.linalg.eigvalsh(h[np.ix_([i0, i1], [i0, i1])])))
        t = float(t_probe)
        for _ in range(max_retries + 1):
            if 0.5 * split * t >= 0.45 * np.pi:
                t *= 0.5
                continue
            if frame == "dressed":
                u_block = w @ np.diag(np.exp(-1j * evals[cols] * t)) @ w.conj().T
            else:
                u_block, _ = polar(hermitian_expm(h, t)[np.ix_([i0, i1], [i0, i1])])
            gen = _su2_log(u_block, t)
            if gen is not None:
                break
            t *= 0.5
        else:
            raise BranchError(f"eigenphase of subspace {label} stays near pi/2 after {max_retries} retries")
        if energy is None:
            energy = -float(np.angle(np.linalg.det(u_block))) / (2 * t)
        frame_shift = float(np.dot(offsets, levels)) + 0.5 * offsets[k]
        gen = gen + np.diag([energy - frame_shift + 0.5 * offsets[k], energy - frame_shift - 0.5 * offsets[k]])
        out[label] = triple_from_generator(gen)
    return out


def synthetic_propagator(omega_x: float, omega_y: float, delta: float, t: float) -> np.ndarray:
    """exp(-i t (Ox X + Oy Y - D Z)/2) for parameters in MHz and t in ns."""
    h = 0.5 * (mhz_to_rad(omega_x) * PAULI["X"] + mhz_to_rad(omega_y) * PAULI["Y"] - mhz_to_rad(delta) * PAULI["Z"])
    return hermitian_expm(h, t)


def generator_from_unitary(u: np.ndarray, t: float) -> GeneratorTriple:
    """Principal-log inverse of :func:`synthetic_propagator` for a 2x2 block."""
    w, _ = polar(u)
    gen = _su2_log(w, t)
    if gen is None:
        raise BranchError("eigenphase near pi/2; shorten t")
    return triple_from_generator(gen)
