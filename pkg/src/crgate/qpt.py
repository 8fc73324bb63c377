"""Two-qubit quantum process tomography of the echoed CR gate.

Pauli order everywhere is II, IX, IY, IZ, XI, XX, ..., ZZ (first letter on
the control). The process matrix follows ``E(rho) = sum_mn chi_mn P_m rho P_n``
with ``tr chi = 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .device import DeviceTopology, basis_index
from .dynamics import (
    PAULI,
    PulseSchedule,
    EvolutionResult,
    ReadoutModel,
    bayes_correct,
    computational_probabilities,
    dressed_basis,
    propagate,
    rotation_operator,
    sample_shots,
)
from .units import TWO_PI

PAULI_LABELS = tuple("".join(p) for p in itertools.product("IXYZ", repeat=2))
OBSERVABLES = PAULI_LABELS[1:]
INPUT_STATES = ("0", "1", "+", "+i")
INPUT_LABELS = tuple(a + "," + b for a, b in itertools.product(INPUT_STATES, repeat=2))
# preparation rotation (axis, angle) from |0>, in the qubit's own frame
_PREP = {"0": None, "1": ("x", math.pi), "+": ("y", math.pi / 2), "+i": ("x", -math.pi / 2)}
# pre-rotation mapping each Pauli eigenbasis onto Z
_MEAS = {"X": ("y", -math.pi / 2), "Y": ("x", math.pi / 2), "Z": None}


class QPTError(ValueError):
    pass


def _pauli2(label: str) -> np.ndarray:
    return np.kron(PAULI[label[0]], PAULI[label[1]])


@lru_cache(maxsize=None)
def _pauli_stack() -> np.ndarray:
    return np.array([_pauli2(p) for p in PAULI_LABELS])


def _single_state(label: str) -> np.ndarray:
    v = {"0": [1, 0], "1": [0, 1], "+": [1, 1], "+i": [1, 1j]}[label]
    v = np.array(v, dtype=complex)
    return v / np.linalg.norm(v)


def pauli_vector(rho: np.ndarray) -> np.ndarray:
    """(tr(P rho)) over the 16 two-qubit Paulis."""
    return np.real(np.einsum("kij,ji->k", _pauli_stack(), rho))


def input_pauli_vectors() -> np.ndarray:
    """16 x 16 array; row i is the Pauli vector of input i."""
    rows = []
    for lb in INPUT_LABELS:
        a, b = lb.split(",")
        psi = np.kron(_single_state(a), _single_state(b))
        rows.append(pauli_vector(np.outer(psi, psi.conj())))
    return np.array(rows)


# --- data types -----------------------------------------------------------


@dataclass(frozen=True)
class QPTDataset:
    """Measured two-qubit Pauli expectations, one row per input, columns ``OBSERVABLES``."""

    expectations: np.ndarray  # (16, 15)
    inputs: tuple[str, ...] = INPUT_LABELS
    observables: tuple[str, ...] = OBSERVABLES
    shots: Optional[int] = None
    seed: Optional[int] = None
    frame_phases: Optional[tuple[float, float]] = None  # control, target Z phases from the propagator
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        e = np.asarray(self.expectations, dtype=float)
        if e.shape != (len(self.inputs), len(self.observables)):
            raise QPTError(f"expectations have shape {e.shape}, expected {(len(self.inputs), len(self.observables))}")
        if np.any(np.abs(e) > 1 + 1e-9):
            raise QPTError("expectation values must lie in [-1, 1]")
        object.__setattr__(self, "expectations", e)


@dataclass(frozen=True)
class ProcessMatrix:
    chi: np.ndarray

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.chi)))

    @property
    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(self.chi)))

    @property
    def physical(self) -> bool:
        return self.min_eigenvalue > -1e-10 and abs(self.trace - 1) < 1e-10

    def export_tables(self) -> tuple[list[list[float]], list[list[float]]]:
        """Real and imaginary parts as row lists, rows/columns in ``PAULI_LABELS`` order."""
        return np.real(self.chi).tolist(), np.imag(self.chi).tolist()


# --- simulation -----------------------------------------------------------


def _expectations_from_probs(probs: Mapping[str, np.ndarray]) -> np.ndarray:
    """Combine 9 basis measurements into the 15 Pauli expectations (marginals averaged)."""
    z = np.array([1, -1])
    zz = np.kron(z, z)
    zi = np.kron(z, [1, 1])
    iz = np.kron([1, 1], z)
    acc = {o: [] for o in OBSERVABLES}
    for (a, b), p in probs.items():
        acc[a + b].append(p @ zz)
        acc[a + "I"].append(p @ zi)
        acc["I" + b].append(p @ iz)
    return np.array([np.mean(acc[o]) for o in OBSERVABLES])


def run_qpt(
    topology: DeviceTopology,
    gate_schedule: PulseSchedule,
    gate_qubits: tuple[str, str],
    shots: Optional[int] = None,
    seed: int = 0,
    *,
    mode: str = "unitary",
    dt: float = 0.1,
    model: str = "effective_qubits",
    readout: Optional[ReadoutModel] = None,
    spectator_prep: Sequence = (),
    coherence: Optional[Mapping] = None,
    frame_frequency: Optional[float] = None,
    evolution: Optional[EvolutionResult] = None,
) -> QPTDataset:
    """Simulate preparation, gate and the 9 Pauli-basis measurements for all 16 inputs.

    ``shots=None`` gives exact expectations. Finite shots are drawn through
    ``readout`` (defaults to the device's readout fidelities) and corrected by
    Bayesian inversion. ``spectator_prep`` rotations act before every input.
    Leaked levels read out as 1. In unitary mode a precomputed ``evolution``
    of ``gate_schedule`` (full propagator) can be passed to skip propagation.
    """
    control, target = gate_qubits
    base = None
    if mode == "unitary":
        base = evolution or propagate(topology, gate_schedule, "unitary", dt, model=model, initial_state=None, frame_frequency=frame_frequency)
    if base is None:
        probe = propagate(topology, PulseSchedule(()), "unitary", dt, model=model, frame_frequency=frame_frequency or gate_schedule.drive_frequency())
        ham, frame = probe.hamiltonian, probe.frame
    else:
        ham, frame = base.hamiltonian, base.frame
        u_q = base.qubit_frame_propagator()
    dims = ham.dims
    dim = int(np.prod(dims))
    kc, kt = ham.mode(control), ham.mode(target)
    vd = dressed_basis(ham)[1]
    ground = vd[:, 0].copy()
    spec_op = np.eye(dim, dtype=complex)
    for r in spectator_prep:
        spec_op = rotation_operator(ham, r.qubit, r.axis, r.angle) @ spec_op
    if shots is not None:
        if shots <= 0:
            raise QPTError("shots must be positive")
        readout = readout or ReadoutModel.from_topology(topology, [control, target])

    meas_ops = {}
    for a, b in itertools.product("XYZ", repeat=2):
        m = np.eye(dim, dtype=complex)
        if _MEAS[a] is not None:
            m = rotation_operator(ham, control, *_MEAS[a]) @ m
        if _MEAS[b] is not None:
            m = rotation_operator(ham, target, *_MEAS[b]) @ m
        meas_ops[(a, b)] = m

    rows = []
    for i, lb in enumerate(INPUT_LABELS):
        a_in, b_in = lb.split(",")
        psi = spec_op @ ground
        for q, s in ((control, a_in), (target, b_in)):
            if _PREP[s] is not None:
                psi = rotation_operator(ham, q, *_PREP[s]) @ psi
        if mode == "unitary":
            out = u_q @ psi
        else:
            res = propagate(
                topology, gate_schedule, "dissipative", dt, model=model, initial_state=psi, coherence=coherence, ham=ham, frame=frame
            )
            out = res.qubit_frame_state()
        probs = {}
        for j, (key, m) in enumerate(meas_ops.items()):
            # readout projects onto the dressed states
            m = vd.conj().T @ m
            st = m @ out if out.ndim == 1 else m @ out @ m.conj().T
            p = computational_probabilities(st, dims, [kc, kt])
            if shots is not None:
                counts = sample_shots(p, readout, shots, seed=seed * 1000003 + 9 * i + j)
                p = bayes_correct(counts, readout).probabilities
            probs[key] = p
        rows.append(_expectations_from_probs(probs))

    phases = None
    if mode == "unitary":
        phases = frame_tracking_phases(vd.conj().T @ u_q @ vd, dims, kc, kt)
    return QPTDataset(np.clip(np.array(rows), -1, 1), shots=shots, seed=seed, frame_phases=phases)


def frame_tracking_phases(u: np.ndarray, dims: Sequence[int], kc: int, kt: int) -> tuple[float, float]:
    """Z phases of control and target read off the propagator diagonal (other modes in |0>).

    Pass the propagator in the dressed basis to track the dressed qubits.
    """
    def diag(c, t):
        lv = [0] * len(dims)
        lv[kc], lv[kt] = c, t
        i = basis_index(lv, dims)
        return u[i, i]

    d00 = diag(0, 0)
    return float(np.angle(diag(1, 0) / d00)), float(np.angle(diag(0, 1) / d00))


def dataset_from_unitary(u: np.ndarray) -> QPTDataset:
    """Exact dataset of a 4x4 unitary acting on the standard inputs."""
    return dataset_from_channel(lambda rho: u @ rho @ u.conj().T)


def dataset_from_channel(channel) -> QPTDataset:
    rows = []
    for lb in INPUT_LABELS:
        a, b = lb.split(",")
        psi = np.kron(_single_state(a), _single_state(b))
        rows.append(pauli_vector(channel(np.outer(psi, psi.conj())))[1:])
    return QPTDataset(np.array(rows))


# --- reconstruction -------------------------------------------------------


@lru_cache(maxsize=None)
def _chi_design() -> np.ndarray:
    """Maps vec(chi) to the PTM entries R_ij = tr(P_i E(P_j)) / 4."""
    p = _pauli_stack()
    # tr(P_i P_m P_j P_n) / 4
    t = np.einsum("iab,mbc,jcd,nda->ijmn", p, p, p, p) / 4.0
    return t.reshape(256, 256)


def reconstruct_chi(dataset: QPTDataset) -> ProcessMatrix:
    """Linear inversion: data -> Pauli transfer matrix -> chi, trace-normalized and Hermitized."""
    inputs = input_pauli_vectors()  # (16 inputs, 16 paulis)
    outputs = np.column_stack([np.ones(len(dataset.inputs)), dataset.expectations])
    if np.linalg.matrix_rank(inputs) < 16:
        raise QPTError("input states are not informationally complete")
    # outputs[i, k] = sum_j R[k, j] inputs[i, j] / 4 * 4 -> R = (inputs^-1 outputs)^T
    ptm = np.linalg.solve(inputs, outputs).T
    chi_vec = np.linalg.solve(_chi_design(), ptm.reshape(-1))
    chi = chi_vec.reshape(16, 16)
    chi = 0.5 * (chi + chi.conj().T)
    tr = np.real(np.trace(chi))
    if abs(tr) < 1e-12:
        raise QPTError("reconstructed chi has zero trace")
    return ProcessMatrix(chi / tr)


def mle_project(pm: ProcessMatrix) -> ProcessMatrix:
    """Closest physical chi (trace one, PSD) in eigenvalue space.

    Eigenvalues are taken in descending order; the smallest are zeroed while
    the mass they carry, spread over the remaining ones, would leave any of
    them negative, and that mass is then shared equally by the survivors.
    For a chi with a single negative eigenvalue next to zeros this is plain
    clipping plus renormalization.
    """
    chi = 0.5 * (pm.chi + pm.chi.conj().T)
    w, v = np.linalg.eigh(chi)
    total = w.sum()
    if total <= 0 or np.all(w <= 0):
        raise QPTError("chi has no positive eigenvalue")
    w, v = w[::-1] / total, v[:, ::-1]
    acc, i = 0.0, len(w)
    while i > 0 and w[i - 1] + acc / i < 0:
        acc += w[i - 1]
        w[i - 1] = 0.0
        i -= 1
    w[:i] += acc / i
    out = (v * w) @ v.conj().T
    return ProcessMatrix(0.5 * (out + out.conj().T))


def chi_from_unitary(u: np.ndarray) -> ProcessMatrix:
    # u = sum_k v_k P_k with v_k = tr(P_k u) / 4 (Paulis are Hermitian)
    v = np.einsum("kij,ji->k", _pauli_stack(), u) / 4.0
    return ProcessMatrix(np.outer(v, v.conj()))


def fidelity(chi_exp: ProcessMatrix, chi_ideal: ProcessMatrix) -> float:
    """F = tr(chi_exp chi_ideal) for trace-one process matrices."""
    for pm in (chi_exp, chi_ideal):
        if abs(pm.trace - 1) > 1e-8:
            raise QPTError(f"process matrix trace {pm.trace} != 1")
    return float(np.real(np.trace(chi_exp.chi @ chi_ideal.chi)))


# --- ideal gate -----------------------------------------------------------


def rz(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def ideal_unitary(corrections: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """(Rz(theta_c) x Rz(theta_t)) exp(-i pi/4 ZX)."""
    zx = np.kron(PAULI["Z"], PAULI["X"])
    base = math.cos(math.pi / 4) * np.eye(4) - 1j * math.sin(math.pi / 4) * zx
    return np.kron(rz(corrections[0]), rz(corrections[1])) @ base


@dataclass(frozen=True)
class IdealGate:
    chi: ProcessMatrix
    corrections: tuple[float, float]
    fidelity: Optional[float] = None


def ideal_gate_chi(
    local_phase_corrections: Optional[tuple[float, float]] = None,
    chi_exp: Optional[ProcessMatrix] = None,
    grid: int = 24,
) -> IdealGate:
    """Rank-1 chi of the locally corrected ZX(pi/2) gate.

    With explicit corrections the chi is returned as is. Otherwise the two
    Z angles are optimized against ``chi_exp`` by a grid search refined with
    Nelder-Mead.
    """
    if local_phase_corrections is not None:
        c = tuple(float(x) for x in local_phase_corrections)
        chi = chi_from_unitary(ideal_unitary(c))
        f = fidelity(chi_exp, chi) if chi_exp is not None else None
        return IdealGate(chi, c, f)
    if chi_exp is None:
        raise QPTError("chi_exp is required to optimize corrections")

    def neg(th):
        return -fidelity(chi_exp, chi_from_unitary(ideal_unitary((th[0], th[1]))))

    angles = np.linspace(0, TWO_PI, grid, endpoint=False)
    best = min(((neg((a, b)), (a, b)) for a in angles for b in angles), key=lambda x: x[0])
    sol = minimize(neg, np.array(best[1]), method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-12})
    c = tuple(float((x + math.pi) % TWO_PI - math.pi) for x in sol.x)
    chi = chi_from_unitary(ideal_unitary(c))
    return IdealGate(chi, c, fidelity(chi_exp, chi))


def corrected_unitary_fidelity(u4: np.ndarray, grid: int = 12) -> tuple[float, tuple[float, float]]:
    """``|tr(U_ideal^dagger u4)|^2 / 16`` maximized over the two local Z corrections.

    For a unitary ``u4`` this equals the chi-matrix fidelity; for a
    leaky sub-block it counts the lost population as error.
    """
    m = np.diag(np.asarray(u4) @ ideal_unitary().conj().T)

    def neg(th):
        d = np.kron(np.diag(rz(th[0])), np.diag(rz(th[1])))
        return -abs(np.vdot(d, m)) ** 2 / 16.0

    angles = np.linspace(0, TWO_PI, grid, endpoint=False)
    start = min(((a, b) for a in angles for b in angles), key=neg)
    sol = minimize(neg, np.array(start), method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-13})
    return float(-sol.fun), tuple(float((x + math.pi) % TWO_PI - math.pi) for x in sol.x)


def relative_gate_error(control_group_f: float, experimental_group_f: float) -> float:
    """Control-group minus experimental-group fidelity; positive means degradation."""
    return float(control_group_f - experimental_group_f)
