"""Hamiltonian tomography: Bloch-equation fits and Pauli-coefficient inversion.

Generator convention for one subspace: ``H = (Ox X + Oy Y - D Z) / 2``, so the
Bloch vector obeys ``dr/dt = w x r`` with ``w = (Ox, Oy, -D)``. Multi-qubit
coefficients follow ``H = sum_P c_P P`` with the control (and spectator)
restricted to Z-type operators.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .device import DeviceTopology, DriveSpec, basis_index, build_hamiltonian
from .dynamics import (
    GeneratorTriple,
    ProjectionSeries,
    QubitFrame,
    ReadoutModel,
    bayes_correct,
    bloch_from_density,
    effective_generator_oracle,
    qubit_frame,
    reduced_density,
    sample_shots,
)
from .units import TWO_PI, mhz_to_rad, rad_to_mhz

ORDERINGS = ("control⊗target", "spectator⊗control⊗target", "control⊗target⊗spectator")


class FitError(RuntimeError):
    pass


class CalibrationError(RuntimeError):
    pass


# --- Bloch fit ------------------------------------------------------------


@dataclass(frozen=True)
class BlochFitResult:
    omega_x: float  # MHz
    omega_y: float  # MHz
    delta: float  # MHz
    residual: float
    subspace_label: str = ""
    converged: bool = True
    leakage: float = 0.0
    energy: Optional[float] = None  # MHz, only known for oracle-derived results

    def __post_init__(self):
        if not self.residual >= 0:
            raise ValueError("residual must be >= 0")
        if not all(map(math.isfinite, (self.omega_x, self.omega_y, self.delta))):
            raise ValueError("fit parameters must be finite")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.omega_x, self.omega_y, self.delta)

    @classmethod
    def from_triple(cls, triple: GeneratorTriple, label: str = "") -> "BlochFitResult":
        return cls(triple.omega_x, triple.omega_y, triple.delta, 0.0, label, energy=triple.energy)


def bloch_trajectory(params_mhz: Sequence[float], times: np.ndarray, r0: Sequence[float] = (0, 0, 1)) -> np.ndarray:
    """Closed-form solution of dr/dt = w x r, shape (len(times), 3)."""
    ox, oy, d = params_mhz
    w = mhz_to_rad(np.array([ox, oy, -d]))
    r0 = np.asarray(r0, dtype=float)
    norm = np.linalg.norm(w)
    t = np.asarray(times, dtype=float)[:, None]
    if norm < 1e-15:
        return np.repeat(r0[None, :], len(t), axis=0)
    n = w / norm
    theta = norm * t
    return r0 * np.cos(theta) + np.cross(n, r0) * np.sin(theta) + n * np.dot(n, r0) * (1 - np.cos(theta))


def _seeds(times: np.ndarray, data: np.ndarray, r0: np.ndarray) -> list[np.ndarray]:
    t = times - times[0]
    dt = np.median(np.diff(t))
    centered = data - data.mean(axis=0)
    spec = np.abs(np.fft.rfft(centered, axis=0)) ** 2
    freqs = np.fft.rfftfreq(len(t), dt)  # cycles/ns
    power = spec.sum(axis=1)
    power[0] = 0.0
    k = int(np.argmax(power))
    if 0 < k < len(power) - 1:
        a, b, c = power[k - 1], power[k], power[k + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
    else:
        shift = 0.0
    f = max(freqs[k] + shift * (freqs[1] - freqs[0]), 0.5 / (t[-1] + dt))
    speed = TWO_PI * f  # rad/ns

    # early-time slope gives w x r0
    m = min(len(t), 5)
    slope = np.polyfit(t[:m], data[:m], 2)[-2]
    r0n = r0 / max(np.dot(r0, r0), 1e-12)
    w_perp = np.cross(r0, slope) / max(np.dot(r0, r0), 1e-12)
    par2 = max(speed ** 2 - np.dot(w_perp, w_perp), 0.0)
    seeds = []
    for sign in (1.0, -1.0):
        w = w_perp + sign * math.sqrt(par2) * r0n * np.linalg.norm(r0)
        seeds.append(w)
    mean = data.mean(axis=0)
    if np.linalg.norm(mean) > 0.05:
        n = mean / np.linalg.norm(mean)
        for sign in (1.0, -1.0):
            seeds.append(sign * speed * n)
    out = []
    for w in seeds:
        ox, oy, mz = rad_to_mhz(w)
        out.append(np.array([ox, oy, -mz]))
    return out


def bloch_fit(
    series: ProjectionSeries | tuple,
    init_guess: Optional[Sequence[float]] = None,
    *,
    r0: Sequence[float] = (0.0, 0.0, 1.0),
    restarts: int = 4,
    seed: int = 0,
    subspace_label: Optional[str] = None,
) -> BlochFitResult:
    """Least-squares fit of a constant Bloch generator to a projected Rabi series.

    ``series`` is a :class:`ProjectionSeries` or a ``(times, xyz)`` pair.
    Frequencies are seeded from the dominant FFT peak and the direction from
    the early-time slope; ``restarts`` jittered seeds are tried on top.
    """
    if isinstance(series, ProjectionSeries):
        times, data = series.times, series.vectors
        label = series.subspace_label if subspace_label is None else subspace_label
        leak = float(np.max(series.leakage)) if len(series.leakage) else 0.0
    else:
        times, data = np.asarray(series[0], dtype=float), np.asarray(series[1], dtype=float)
        label, leak = subspace_label or "", 0.0
    if len(times) < 12:
        raise FitError(f"need at least 12 samples, got {len(times)}")
    r0 = np.asarray(r0, dtype=float)
    t = times - times[0]

    if np.max(np.std(data, axis=0)) < 1e-9:
        return BlochFitResult(0.0, 0.0, 0.0, float(np.var(data)), label, leakage=leak)

    def resid(p):
        return (bloch_trajectory(p, t, r0) - data).ravel()

    candidates = [np.asarray(init_guess, dtype=float)] if init_guess is not None else []
    candidates += _seeds(t, data, r0)
    rng = np.random.default_rng(seed)
    base = candidates[0]
    for _ in range(restarts):
        candidates.append(base * (1 + 0.1 * rng.standard_normal(3)) + 0.05 * rng.standard_normal(3) * np.linalg.norm(base))

    best = None
    for p0 in candidates:
        try:
            sol = least_squares(resid, p0, method="lm", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=4000)
        except ValueError:
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise FitError("least squares failed for every seed")
    rms = float(np.sqrt(np.mean(best.fun ** 2)))
    ox, oy, d = best.x
    return BlochFitResult(float(ox), float(oy), float(d), rms, label, converged=bool(best.success), leakage=leak)


# --- Pauli coefficient maps -----------------------------------------------


def _conditional_labels(n_cond: int) -> list[str]:
    return ["".join(b) for b in itertools.product("01", repeat=n_cond)]


def _pauli_strings(ordering: str) -> list[tuple[str, tuple[int, ...], str]]:
    """(string, z-mask over conditioning qubits, target axis) for an ordering."""
    out = []
    n_cond = 1 if ordering == ORDERINGS[0] else 2
    for mask in itertools.product((0, 1), repeat=n_cond):
        for axis in "XYZ":
            cond = ["Z" if m else "I" for m in mask]
            if ordering == ORDERINGS[2]:
                s = cond[0] + axis + cond[1]
            else:
                s = "".join(cond) + axis
            out.append((s, mask, axis))
    return out


@dataclass(frozen=True)
class PauliCoefficients:
    """Pauli-string coefficients in MHz, ``H = sum_P c_P P``.

    For ``control⊗target⊗spectator`` subspace labels list the control bit
    first and the spectator bit second.
    """

    values: Mapping[str, float]
    basis_order: str
    residuals: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.basis_order not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.basis_order!r}")
        allowed = {s for s, _, _ in _pauli_strings(self.basis_order)}
        if self.basis_order == ORDERINGS[0]:
            allowed.add("ZI")
        extra = set(self.values) - allowed
        if extra:
            raise ValueError(f"coefficients {sorted(extra)} not allowed for {self.basis_order}")
        object.__setattr__(self, "values", dict(self.values))

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def keys(self):
        return self.values.keys()

    def items(self):
        return self.values.items()


def _invert(fits: Mapping[str, BlochFitResult], ordering: str) -> dict[str, float]:
    n_cond = 1 if ordering == ORDERINGS[0] else 2
    labels = _conditional_labels(n_cond)
    missing = [lb for lb in labels if lb not in fits]
    if missing:
        raise KeyError(f"missing subspace fits {missing}")
    norm = 2.0 ** (n_cond + 1)
    comp = {
        "X": {lb: fits[lb].omega_x for lb in labels},
        "Y": {lb: fits[lb].omega_y for lb in labels},
        "Z": {lb: -fits[lb].delta for lb in labels},
    }
    values = {}
    for s, mask, axis in _pauli_strings(ordering):
        total = 0.0
        for lb in labels:
            sign = (-1) ** sum(m * int(b) for m, b in zip(mask, lb))
            total += sign * comp[axis][lb]
        values[s] = total / norm
    return values


def pauli_coeffs_2q(fits: Mapping[str, BlochFitResult]) -> PauliCoefficients:
    """Invert control-0/1 subspace generators to IX, IY, IZ, ZX, ZY, ZZ (plus ZI when block energies are known)."""
    values = _invert(fits, ORDERINGS[0])
    if fits["0"].energy is not None and fits["1"].energy is not None:
        values["ZI"] = 0.5 * (fits["0"].energy - fits["1"].energy)
    res = {lb: f.residual for lb, f in fits.items()}
    return PauliCoefficients(values, ORDERINGS[0], res)


def pauli_coeffs_3q(fits: Mapping[str, BlochFitResult], ordering: str) -> PauliCoefficients:
    """Invert the four subspace generators to the twelve Z-conditioned target strings."""
    if ordering == ORDERINGS[0]:
        raise ValueError("use pauli_coeffs_2q for control⊗target")
    values = _invert(fits, ordering)
    return PauliCoefficients(values, ordering, {lb: f.residual for lb, f in fits.items()})


def subspace_generators(coeffs: PauliCoefficients) -> dict[str, BlochFitResult]:
    """Forward map: Pauli coefficients to per-subspace (Ox, Oy, D)."""
    n_cond = 1 if coeffs.basis_order == ORDERINGS[0] else 2
    out = {}
    for lb in _conditional_labels(n_cond):
        comp = {"X": 0.0, "Y": 0.0, "Z": 0.0}
        for s, mask, axis in _pauli_strings(coeffs.basis_order):
            sign = (-1) ** sum(m * int(b) for m, b in zip(mask, lb))
            comp[axis] += sign * coeffs.values.get(s, 0.0)
        out[lb] = BlochFitResult(2 * comp["X"], 2 * comp["Y"], -2 * comp["Z"], 0.0, lb)
    return out


# --- simulated tomography -------------------------------------------------


def rabi_times(window: float = 3000.0, samples: int = 301) -> np.ndarray:
    return np.linspace(0.0, window, samples)


def _eig_evolution(h: np.ndarray, psi0: np.ndarray, times: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(h)
    c = evecs.conj().T @ psi0
    return (evecs[None, :, :] * (np.exp(-1j * np.outer(times, evals)) * c)[:, None, :]).sum(axis=2)


def _finite_shot_bloch(exp: float, leak: float, n_shots: int, readout: ReadoutModel, seed: int) -> float:
    """One axis, sampled as a single-qubit readout and Bayes-corrected."""
    p1 = (1.0 - leak) * (1 - exp) / 2 + leak
    counts = sample_shots(np.array([1 - p1, p1]), readout, n_shots, seed)
    probs, _ = bayes_correct(counts, readout)
    return float(probs[0] - probs[1])


def rabi_series(
    topology: DeviceTopology,
    drive: DriveSpec,
    target: str,
    prep: Mapping[str, int],
    times: Optional[np.ndarray] = None,
    *,
    model: str = "effective_qubits",
    shots: Optional[int] = None,
    readout: Optional[ReadoutModel] = None,
    seed: int = 0,
    ham=None,
    frame: Optional[QubitFrame] = None,
) -> ProjectionSeries:
    """Target Bloch components under a square CR pulse from a computational preparation.

    The non-target qubits start in the levels given by ``prep``, the target in
    |0>. Expectation values are read in the target's own frame; with finite
    ``shots`` each axis is sampled and Bayes-corrected.
    """
    times = rabi_times() if times is None else np.asarray(times, dtype=float)
    const = dataclasses.replace(drive, ramp=0.0)
    if ham is None:
        ham = build_hamiltonian(topology, mode=model, drive=const, frame="rotating_at_drive")
    if frame is None:
        frame = qubit_frame(build_hamiltonian(topology, mode=model, frame="rotating_at_drive", frame_frequency=drive.frequency), dressed=False)
    levels = [0] * len(ham.dims)
    for lb, v in prep.items():
        levels[ham.mode(lb)] = int(v)
    psi0 = np.zeros(ham.dim, dtype=complex)
    psi0[basis_index(levels, ham.dims)] = 1.0
    states = _eig_evolution(ham(0.0), psi0, times)
    k = ham.mode(target)
    rows = []
    for t, psi in zip(times, states):
        rho = reduced_density(frame.to_qubit_frame(psi, t), ham.dims, [k])
        rows.append(bloch_from_density(rho))
    rows = np.array(rows)
    xyz, leak = rows[:, :3], rows[:, 3]
    if shots is not None:
        readout = readout or ReadoutModel.perfect(1)
        noisy = np.empty_like(xyz)
        for i in range(len(times)):
            for j in range(3):
                noisy[i, j] = _finite_shot_bloch(xyz[i, j], leak[i], shots, readout, seed + 3 * i + j)
        xyz = noisy
    label = "".join(str(v) for _, v in sorted(prep.items(), key=lambda kv: ham.mode(kv[0])))
    return ProjectionSeries(times, xyz[:, 0], xyz[:, 1], xyz[:, 2], leak, label, bool(np.any(leak > 0.05)))


@dataclass(frozen=True)
class TomographyResult:
    coefficients: PauliCoefficients
    fits: Mapping[str, BlochFitResult]
    series: Mapping[str, ProjectionSeries]
    flagged: bool = False
    flags: tuple[str, ...] = ()

    def report_rows(self, sweep_value=None) -> list[dict]:
        worst = max((f.residual for f in self.fits.values()), default=0.0)
        return [
            {"sweep": sweep_value, "label": k, "value_mhz": v, "residual": worst, "flag": int(self.flagged)}
            for k, v in self.coefficients.items()
        ]


def _run(topology, drive, target, preps, times, model, shots, readout, seed, residual_limit, leakage_limit):
    const = dataclasses.replace(drive, ramp=0.0)
    ham = build_hamiltonian(topology, mode=model, drive=const, frame="rotating_at_drive")
    frame = qubit_frame(build_hamiltonian(topology, mode=model, frame="rotating_at_drive", frame_frequency=drive.frequency), dressed=False)
    fits, series, flags = {}, {}, []
    for i, prep in enumerate(preps):
        s = rabi_series(topology, drive, target, prep, times, model=model, shots=shots, readout=readout, seed=seed + 10007 * i, ham=ham, frame=frame)
        f = bloch_fit(s, seed=seed + i)
        fits[s.subspace_label] = f
        series[s.subspace_label] = s
        if f.residual > residual_limit:
            flags.append(f"residual:{s.subspace_label}")
        if f.leakage > leakage_limit:
            flags.append(f"leakage:{s.subspace_label}")
    return fits, series, flags


def two_qubit_tomography(
    topology: DeviceTopology,
    drive: DriveSpec,
    control: str,
    target: str,
    times: Optional[np.ndarray] = None,
    *,
    model: str = "effective_qubits",
    shots: Optional[int] = None,
    readout: Optional[ReadoutModel] = None,
    seed: int = 0,
    residual_limit: float = 0.05,
    leakage_limit: float = 0.05,
) -> TomographyResult:
    """CR Hamiltonian tomography with the control prepared in |0> and |1>."""
    preps = [{control: 0}, {control: 1}]
    fits, series, flags = _run(topology, drive, target, preps, times, model, shots, readout, seed, residual_limit, leakage_limit)
    coeffs = pauli_coeffs_2q(fits)
    return TomographyResult(coeffs, fits, series, bool(flags), tuple(flags))


def three_qubit_tomography(
    topology: DeviceTopology,
    drive: DriveSpec,
    control: str,
    target: str,
    spectator: str,
    times: Optional[np.ndarray] = None,
    *,
    model: str = "effective_qubits",
    shots: Optional[int] = None,
    readout: Optional[ReadoutModel] = None,
    seed: int = 0,
    pole_catalog=None,
    pole_coordinate: Optional[float] = None,
    pole_window: float = 15.0,
    residual_limit: float = 0.05,
    leakage_limit: float = 0.05,
) -> TomographyResult:
    """Tomography over the four control/spectator preparations.

    The ordering follows the chain: a spectator on the control side gives
    ``spectator⊗control⊗target``, on the target side ``control⊗target⊗spectator``.
    Results inside ``pole_window`` MHz of a catalogued pole are flagged.
    """
    labels = topology.labels
    ordering = ORDERINGS[1] if labels.index(spectator) < labels.index(control) else ORDERINGS[2]
    first, second = (spectator, control) if ordering == ORDERINGS[1] else (control, spectator)
    preps = [{first: a, second: b} for a, b in itertools.product((0, 1), repeat=2)]
    fits, series, flags = _run(topology, drive, target, preps, times, model, shots, readout, seed, residual_limit, leakage_limit)
    if pole_catalog is not None and pole_coordinate is not None and pole_catalog.near(pole_coordinate, pole_window):
        flags.append("pole")
    coeffs = pauli_coeffs_3q(fits, ordering)
    return TomographyResult(coeffs, fits, series, bool(flags), tuple(flags))


def oracle_coefficients(
    topology: DeviceTopology,
    drive: DriveSpec,
    control: str,
    target: str,
    spectator: Optional[str] = None,
    *,
    model: str = "effective_qubits",
    t_probe: float = 100.0,
) -> PauliCoefficients:
    """Pauli coefficients from :func:`effective_generator_oracle` instead of fitted data."""
    if spectator is None:
        preps = [{control: 0}, {control: 1}]
    else:
        preps = [{control: a, spectator: b} for a, b in itertools.product((0, 1), repeat=2)]
    triples = effective_generator_oracle(topology, drive, target, preps, t_probe, model=model)
    fits = {lb: BlochFitResult.from_triple(tr, lb) for lb, tr in triples.items()}
    if spectator is None:
        return pauli_coeffs_2q(fits)
    labels = topology.labels
    ordering = ORDERINGS[1] if labels.index(spectator) < labels.index(control) else ORDERINGS[2]
    return pauli_coeffs_3q(fits, ordering)


# --- drive phase ----------------------------------------------------------


def phase_from_sinusoids(phases: Sequence[float], zx: Sequence[float], zy: Sequence[float], min_amplitude: float = 1e-3) -> float:
    """Phase where the fitted ZY sinusoid crosses zero with ZX positive.

    Both series are fitted to ``a cos(phi) + b sin(phi) + c``.
    """
    phases = np.asarray(phases, dtype=float)
    if len(phases) < 16:
        raise CalibrationError(f"need at least 16 phases, got {len(phases)}")
    design = np.column_stack([np.cos(phases), np.sin(phases), np.ones_like(phases)])
    ax, bx, _ = np.linalg.lstsq(design, np.asarray(zx, dtype=float), rcond=None)[0]
    ay, by, cy = np.linalg.lstsq(design, np.asarray(zy, dtype=float), rcond=None)[0]
    amp = math.hypot(ay, by)
    if amp < min_amplitude or amp < abs(cy):
        raise CalibrationError("ZY shows no zero crossing; drive too weak for phase calibration")
    # ay cos + by sin + cy = amp cos(phi - psi) + cy = 0
    psi = math.atan2(by, ay)
    base = math.acos(-cy / amp)
    roots = [(psi + base) % TWO_PI, (psi - base) % TWO_PI]
    zx_at = [ax * math.cos(r) + bx * math.sin(r) for r in roots]
    return roots[int(np.argmax(zx_at))]


@dataclass(frozen=True)
class PhaseCalibration:
    phi0: float
    phases: np.ndarray
    zx: np.ndarray
    zy: np.ndarray


def drive_phase_calibration(
    topology: DeviceTopology,
    drive: DriveSpec,
    control: str,
    target: str,
    phases: Optional[Sequence[float]] = None,
    *,
    model: str = "effective_qubits",
    use_oracle: bool = False,
    times: Optional[np.ndarray] = None,
) -> PhaseCalibration:
    """Run 2q tomography across drive phases and locate ZY = 0 with ZX > 0."""
    phases = np.linspace(0, TWO_PI, 16, endpoint=False) if phases is None else np.asarray(phases, dtype=float)
    zx, zy = [], []
    for phi in phases:
        d = drive.with_phase(phi)
        if use_oracle:
            c = oracle_coefficients(topology, d, control, target, model=model)
        else:
            c = two_qubit_tomography(topology, d, control, target, times, model=model).coefficients
        zx.append(c["ZX"])
        zy.append(c["ZY"])
    zx, zy = np.array(zx), np.array(zy)
    return PhaseCalibration(phase_from_sinusoids(phases, zx, zy), phases, zx, zy)
