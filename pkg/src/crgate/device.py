"""Device parameters and truncated-Fock-space Hamiltonians.

Tensor ordering convention: the first mode in ``Hamiltonian.labels`` is the
most significant factor of every Kronecker product (``|q0 q1 ...>`` with q0
leftmost). For ``effective_qubits`` the modes are the qubits in chain order;
for ``full_chain`` they interleave as Q1, C1, Q2, C2, ..., Qn.

Frequencies in config files are GHz (qubits, couplers) and MHz (couplings,
drive amplitudes); everything returned by :func:`build_hamiltonian` is in
rad/ns.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .units import ghz_to_rad, mhz_to_rad

DEFAULT_DIMENSION_CAP = 4096


class DeviceConfigError(ValueError):
    """Raised for malformed or invalid device configuration."""


class DimensionError(ValueError):
    """Raised when a Hilbert space would exceed the configured size cap."""


@dataclass(frozen=True)
class TransmonSpec:
    label: str
    omega_ge: float  # GHz
    anharmonicity: float  # GHz, signed (negative for transmons)
    t1: Optional[float] = None  # us
    t2: Optional[float] = None  # us
    readout_fid_g: Optional[float] = None
    readout_fid_e: Optional[float] = None

    def __post_init__(self):
        where = f"qubit {self.label!r}"
        if not (math.isfinite(self.omega_ge) and self.omega_ge > 0):
            raise DeviceConfigError(f"{where}: omega_ge must be > 0, got {self.omega_ge}")
        if not math.isfinite(self.anharmonicity) or self.anharmonicity == 0:
            raise DeviceConfigError(f"{where}: anharmonicity must be nonzero, got {self.anharmonicity}")
        for name in ("t1", "t2"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise DeviceConfigError(f"{where}: {name} must be > 0, got {value}")
        for name in ("readout_fid_g", "readout_fid_e"):
            value = getattr(self, name)
            if value is not None and not (0.5 < value <= 1.0):
                raise DeviceConfigError(f"{where}: {name} must lie in (0.5, 1], got {value}")


@dataclass(frozen=True)
class CouplerSpec:
    label: str
    omega: float  # GHz
    anharmonicity: float  # GHz, stored negative

    def __post_init__(self):
        if not (math.isfinite(self.omega) and self.omega > 0):
            raise DeviceConfigError(f"coupler {self.label!r}: omega must be > 0, got {self.omega}")
        if not math.isfinite(self.anharmonicity) or self.anharmonicity == 0:
            raise DeviceConfigError(f"coupler {self.label!r}: anharmonicity must be nonzero")


@dataclass(frozen=True)
class PairCoupling:
    """Couplings of one adjacent qubit pair, all in MHz.

    ``j`` is an optional effective qubit-qubit coupling. It is required when
    the topology has no couplers and overrides the coupler-derived value in
    ``effective_qubits`` mode.
    """

    g_left: float = 0.0
    g_right: float = 0.0
    g_direct: float = 0.0
    j: Optional[float] = None

    def __post_init__(self):
        for name in ("g_left", "g_right", "g_direct", "j"):
            value = getattr(self, name)
            if value is None:
                continue
            if not math.isfinite(value) or abs(value) >= 1000.0:
                raise DeviceConfigError(f"coupling {name} must be finite with |value| < 1 GHz, got {value}")


@dataclass(frozen=True)
class DeviceTopology:
    qubits: tuple[TransmonSpec, ...]
    couplers: tuple[CouplerSpec, ...] = ()
    couplings: tuple[PairCoupling, ...] = ()
    truncation: int = 3

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(self.qubits))
        object.__setattr__(self, "couplers", tuple(self.couplers))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        n = len(self.qubits)
        if n == 0:
            raise DeviceConfigError("qubits: at least one qubit is required")
        if not isinstance(self.truncation, (int, np.integer)) or self.truncation < 2:
            raise DeviceConfigError(f"truncation must be an integer >= 2, got {self.truncation}")
        if len(self.couplings) != n - 1:
            raise DeviceConfigError(f"couplings: expected {n - 1} entries, got {len(self.couplings)}")
        if self.couplers and len(self.couplers) != n - 1:
            raise DeviceConfigError(f"couplers: expected {n - 1} entries or none, got {len(self.couplers)}")
        if not self.couplers:
            for k, pc in enumerate(self.couplings):
                if pc.j is None:
                    raise DeviceConfigError(f"couplings[{k}].j is required when no couplers are given")
        labels = [q.label for q in self.qubits] + [c.label for c in self.couplers]
        if len(set(labels)) != len(labels):
            raise DeviceConfigError("labels must be unique across qubits and couplers")
        for k, coupler in enumerate(self.couplers):
            lo, hi = self.qubits[k], self.qubits[k + 1]
            if coupler.omega <= max(lo.omega_ge, hi.omega_ge):
                warnings.warn(
                    f"coupler {coupler.label!r} at {coupler.omega} GHz is not above its qubits; "
                    "the effective (dispersive) model is unreliable here",
                    stacklevel=3,
                )

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(q.label for q in self.qubits)

    def qubit_index(self, label: str) -> int:
        for i, q in enumerate(self.qubits):
            if q.label == label:
                return i
        raise KeyError(f"unknown qubit label {label!r}")

    def qubit(self, label: str) -> TransmonSpec:
        return self.qubits[self.qubit_index(label)]

    def replace_qubit(self, label: str, **changes) -> "DeviceTopology":
        i = self.qubit_index(label)
        qubits = list(self.qubits)
        qubits[i] = dataclasses.replace(qubits[i], **changes)
        return dataclasses.replace(self, qubits=tuple(qubits))

    def replace_coupler(self, index: int, **changes) -> "DeviceTopology":
        couplers = list(self.couplers)
        couplers[index] = dataclasses.replace(couplers[index], **changes)
        return dataclasses.replace(self, couplers=tuple(couplers))

    def replace_coupling(self, index: int, **changes) -> "DeviceTopology":
        couplings = list(self.couplings)
        couplings[index] = dataclasses.replace(couplings[index], **changes)
        return dataclasses.replace(self, couplings=tuple(couplings))

    def subset(self, labels: Sequence[str]) -> "DeviceTopology":
        """Contiguous sub-chain containing exactly ``labels`` (in chain order)."""
        idx = sorted(self.qubit_index(lb) for lb in labels)
        if idx != list(range(idx[0], idx[-1] + 1)):
            raise DeviceConfigError(f"sub-chain {list(labels)} is not contiguous")
        lo, hi = idx[0], idx[-1]
        return DeviceTopology(
            qubits=self.qubits[lo : hi + 1],
            couplers=self.couplers[lo:hi] if self.couplers else (),
            couplings=self.couplings[lo:hi],
            truncation=self.truncation,
        )

    def pair_coupling_mhz(self, k: int) -> float:
        """Effective coupling J (MHz) between qubits k and k+1."""
        pc = self.couplings[k]
        if pc.j is not None:
            return float(pc.j)
        from .analytics import EffectiveCouplingInput, effective_coupling

        c = self.couplers[k]
        return effective_coupling(
            EffectiveCouplingInput(
                g_left=pc.g_left,
                g_right=pc.g_right,
                g_direct=pc.g_direct,
                delta_left=self.qubits[k].omega_ge - c.omega,
                delta_right=self.qubits[k + 1].omega_ge - c.omega,
            )
        )


@dataclass(frozen=True)
class DriveSpec:
    """Microwave drive. ``ramp`` is the cosine ramp time (ns); 0 means constant."""

    target_qubit: str
    amplitude: float  # MHz, Omega/2pi
    frequency: float  # GHz
    phase: float = 0.0
    ramp: float = 10.0

    def __post_init__(self):
        if not self.amplitude >= 0:
            raise DeviceConfigError(f"drive amplitude must be >= 0, got {self.amplitude}")
        if not self.ramp >= 0:
            raise DeviceConfigError(f"drive ramp must be >= 0, got {self.ramp}")

    @property
    def envelope(self) -> str:
        return "constant" if self.ramp == 0 else "flat_top"

    def with_phase(self, phase: float) -> "DriveSpec":
        return dataclasses.replace(self, phase=float(phase))


def envelope_value(tau, duration: Optional[float], ramp: float):
    """Flat-top envelope with cosine ramps, evaluated at time ``tau`` into a pulse.

    Pulses shorter than two ramps use ramps of ``duration / 2``.
    """
    tau = np.asarray(tau, dtype=float)
    if ramp <= 0 or duration is None:
        return np.ones_like(tau) if tau.ndim else 1.0
    r = min(ramp, duration / 2.0)
    if r <= 0:
        return np.zeros_like(tau) if tau.ndim else 0.0
    rise = 0.5 * (1 - np.cos(np.pi * np.clip(tau, 0, r) / r))
    fall = 0.5 * (1 - np.cos(np.pi * np.clip(duration - tau, 0, r) / r))
    out = np.minimum(rise, fall)
    return out if out.ndim else float(out)


# --- config I/O -----------------------------------------------------------

_QUBIT_KEYS = {f.name for f in dataclasses.fields(TransmonSpec)}
_COUPLER_KEYS = {f.name for f in dataclasses.fields(CouplerSpec)}
_COUPLING_KEYS = {f.name for f in dataclasses.fields(PairCoupling)}


def _build(cls, keys, entry, where):
    if not isinstance(entry, dict):
        raise DeviceConfigError(f"{where}: expected a mapping, got {type(entry).__name__}")
    unknown = set(entry) - keys
    if unknown:
        raise DeviceConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**entry)
    except TypeError as exc:
        raise DeviceConfigError(f"{where}: {exc}") from exc


def topology_from_dict(config: dict) -> DeviceTopology:
    if not isinstance(config, dict):
        raise DeviceConfigError("device config must be a mapping at top level")
    if "qubits" not in config:
        raise DeviceConfigError("qubits: missing required key")
    qubits = [_build(TransmonSpec, _QUBIT_KEYS, q, f"qubits[{i}]") for i, q in enumerate(config["qubits"])]
    couplers = []
    for i, c in enumerate(config.get("couplers") or []):
        c = dict(c)
        alpha = c.get("anharmonicity")
        # coupler anharmonicity is tabulated as a magnitude; couplers are transmons
        if isinstance(alpha, (int, float)) and alpha > 0:
            warnings.warn(
                f"couplers[{i}].anharmonicity given as +{alpha} GHz; stored as -{alpha} GHz",
                stacklevel=2,
            )
            c["anharmonicity"] = -float(alpha)
        couplers.append(_build(CouplerSpec, _COUPLER_KEYS, c, f"couplers[{i}]"))
    couplings = [_build(PairCoupling, _COUPLING_KEYS, c, f"couplings[{i}]") for i, c in enumerate(config.get("couplings") or [])]
    return DeviceTopology(
        qubits=tuple(qubits),
        couplers=tuple(couplers),
        couplings=tuple(couplings),
        truncation=config.get("truncation", 3),
    )


def topology_to_dict(topology: DeviceTopology) -> dict:
    def clean(obj):
        return {k: v for k, v in dataclasses.asdict(obj).items() if v is not None}

    return {
        "qubits": [clean(q) for q in topology.qubits],
        "couplers": [clean(c) for c in topology.couplers],
        "couplings": [clean(c) for c in topology.couplings],
        "truncation": int(topology.truncation),
    }


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DeviceConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise DeviceConfigError(f"{path}: parse error: {exc}") from exc
    if not isinstance(data, dict):
        raise DeviceConfigError(f"{path}: top level must be a mapping")
    return data


def load_device(path) -> DeviceTopology:
    """Read and validate a device config file (YAML; JSON is accepted too)."""
    data = read_config(path)
    return topology_from_dict({k: data[k] for k in ("qubits", "couplers", "couplings", "truncation") if k in data})


def save_device(topology: DeviceTopology, path) -> None:
    Path(path).write_text(yaml.safe_dump(topology_to_dict(topology), sort_keys=False))


# --- operators ------------------------------------------------------------


def destroy(d: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1).astype(complex)


def embed(op: np.ndarray, k: int, dims: Sequence[int]) -> np.ndarray:
    """Place a single-mode operator on mode ``k`` of the tensor product."""
    left = int(np.prod(dims[:k])) if k else 1
    right = int(np.prod(dims[k + 1 :])) if k + 1 < len(dims) else 1
    return np.kron(np.kron(np.eye(left), op), np.eye(right))


def basis_index(levels: Sequence[int], dims: Sequence[int]) -> int:
    """Flat index of the product state ``|levels>`` (first mode most significant)."""
    return int(np.ravel_multi_index(tuple(levels), tuple(dims)))


def basis_levels(index: int, dims: Sequence[int]) -> tuple[int, ...]:
    return tuple(int(i) for i in np.unravel_index(index, tuple(dims)))


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """Time-dependent Hermitian operator ``H(t) = static + drive(t)`` in rad/ns.

    ``frame_frequency`` is the angular frequency every mode rotates at
    (zero in the lab frame). Drive terms are stored as ``(operator,
    coefficient(t))`` pairs.
    """

    static: np.ndarray
    labels: tuple[str, ...]
    dims: tuple[int, ...]
    frame: str
    frame_frequency: float
    mode_kinds: tuple[str, ...]
    drive_terms: tuple = field(default=())

    def __call__(self, t: float) -> np.ndarray:
        h = self.static.copy()
        for op, coeff in self.drive_terms:
            h = h + coeff(t) * op
        return h

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def mode(self, label: str) -> int:
        return self.labels.index(label)

    def lowering(self, label: str) -> np.ndarray:
        return embed(destroy(self.dims[self.mode(label)]), self.mode(label), self.dims)

    def number(self, label: str) -> np.ndarray:
        a = self.lowering(label)
        return a.conj().T @ a

    @cached_property
    def number_diagonals(self) -> np.ndarray:
        """Occupation of every mode for every basis state, shape (modes, dim)."""
        grids = np.indices(self.dims).reshape(len(self.dims), -1)
        return grids.astype(float)

    def qubit_modes(self) -> list[int]:
        return [i for i, kind in enumerate(self.mode_kinds) if kind == "qubit"]


def _mode_list(topology: DeviceTopology, mode: str):
    if mode == "effective_qubits":
        modes = [(q.label, "qubit", q.omega_ge, q.anharmonicity) for q in topology.qubits]
        return modes
    if mode == "full_chain":
        if not topology.couplers:
            raise DeviceConfigError("full_chain mode requires couplers")
        modes = []
        for k, q in enumerate(topology.qubits):
            modes.append((q.label, "qubit", q.omega_ge, q.anharmonicity))
            if k < len(topology.couplers):
                c = topology.couplers[k]
                modes.append((c.label, "coupler", c.omega, c.anharmonicity))
        return modes
    raise ValueError(f"unknown mode {mode!r}")


def build_hamiltonian(
    topology: DeviceTopology,
    mode: str = "effective_qubits",
    drive: Optional[DriveSpec] = None,
    frame: str = "rotating_at_drive",
    *,
    duration: Optional[float] = None,
    frame_frequency: Optional[float] = None,
    dimension_cap: int = DEFAULT_DIMENSION_CAP,
) -> Hamiltonian:
    """Build H(t) for the chain.

    In ``rotating_at_drive`` every mode rotates at the drive frequency (or at
    ``frame_frequency`` GHz when no drive is given) and the drive is kept in
    the rotating-wave approximation,
    ``(Omega/2) * env(t) * (a e^{i phi} + a^dag e^{-i phi})``.
    In ``lab`` the drive is ``Omega * env(t) * cos(omega_d t + phi) * (a + a^dag)``.
    ``duration`` (ns) sets the envelope length; ``None`` means a constant drive.
    """
    if frame not in ("lab", "rotating_at_drive"):
        raise ValueError(f"unknown frame {frame!r}")
    modes = _mode_list(topology, mode)
    d = topology.truncation
    dims = tuple([d] * len(modes))
    dim = d ** len(modes)
    if dim > dimension_cap:
        raise DimensionError(f"Hilbert space dimension {d}^{len(modes)} = {dim} exceeds cap {dimension_cap}")

    if frame == "rotating_at_drive":
        if drive is not None:
            w_frame = ghz_to_rad(drive.frequency)
        elif frame_frequency is not None:
            w_frame = ghz_to_rad(frame_frequency)
        else:
            w_frame = 0.0
    else:
        w_frame = 0.0

    n_levels = np.arange(d, dtype=float)
    diag = np.zeros(dim)
    occ = np.indices(dims).reshape(len(dims), -1).astype(float)
    freqs = []
    for i, (_, kind, omega, alpha) in enumerate(modes):
        w = ghz_to_rad(omega)
        if mode == "effective_qubits":
            w += _lamb_shift(topology, i)
        freqs.append(w)
        single = (w - w_frame) * n_levels + 0.5 * ghz_to_rad(alpha) * n_levels * (n_levels - 1)
        diag += single[occ[i].astype(int)]
    static = np.diag(diag).astype(complex)

    ops = [embed(destroy(d), i, dims) for i in range(len(modes))]

    def exchange(i, j, g_rad):
        return g_rad * (ops[i].conj().T @ ops[j] + ops[j].conj().T @ ops[i])

    labels = tuple(m[0] for m in modes)
    if mode == "effective_qubits":
        for k in range(len(topology.qubits) - 1):
            static = static + exchange(k, k + 1, mhz_to_rad(topology.pair_coupling_mhz(k)))
    else:
        for k, pc in enumerate(topology.couplings):
            qa = labels.index(topology.qubits[k].label)
            cc = labels.index(topology.couplers[k].label)
            qb = labels.index(topology.qubits[k + 1].label)
            static = static + exchange(qa, cc, mhz_to_rad(pc.g_left))
            static = static + exchange(cc, qb, mhz_to_rad(pc.g_right))
            static = static + exchange(qa, qb, mhz_to_rad(pc.g_direct))

    ham = Hamiltonian(
        static=static,
        labels=labels,
        dims=dims,
        frame="lab" if frame == "lab" else "rotating",
        frame_frequency=w_frame,
        mode_kinds=tuple(m[1] for m in modes),
    )
    if drive is None:
        return ham

    if drive.target_qubit not in labels:
        raise DeviceConfigError(f"drive target {drive.target_qubit!r} is not a mode of this Hamiltonian")
    a = ops[labels.index(drive.target_qubit)]
    amp = mhz_to_rad(drive.amplitude)
    wd = ghz_to_rad(drive.frequency)
    if frame == "lab":
        op = a + a.conj().T

        def coeff(t, amp=amp, wd=wd, ph=drive.phase, ramp=drive.ramp):
            return amp * envelope_value(t, duration, ramp) * np.cos(wd * t + ph)

        terms = ((op, coeff),)
    else:
        op = 0.5 * amp * (np.exp(1j * drive.phase) * a + np.exp(-1j * drive.phase) * a.conj().T)

        def coeff(t, ramp=drive.ramp):
            return envelope_value(t, duration, ramp)

        terms = ((op, coeff),)
    return dataclasses.replace(ham, drive_terms=terms)


def _lamb_shift(topology: DeviceTopology, i: int) -> float:
    """Second-order frequency shift (rad/ns) of qubit i from its adjacent couplers."""
    if not topology.couplers:
        return 0.0
    shift = 0.0
    q = topology.qubits[i]
    if i > 0:
        c = topology.couplers[i - 1]
        g = topology.couplings[i - 1].g_right
        shift += mhz_to_rad(g) ** 2 / ghz_to_rad(q.omega_ge - c.omega)
    if i < len(topology.couplers):
        c = topology.couplers[i]
        g = topology.couplings[i].g_left
        shift += mhz_to_rad(g) ** 2 / ghz_to_rad(q.omega_ge - c.omega)
    return shift


def hermiticity_error(h: np.ndarray) -> float:
    return float(np.max(np.abs(h - h.conj().T)))
