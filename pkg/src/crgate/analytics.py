"""Closed-form CR-gate quantities and exact-diagonalization companions.

Inputs and outputs follow the lab conventions of the device tables: qubit and
coupler frequencies in GHz, couplings, detunings and rates in MHz.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import brentq, linear_sum_assignment, minimize_scalar

from .device import DeviceTopology, basis_index, build_hamiltonian
from .units import rad_to_mhz

SQRT2 = math.sqrt(2.0)


class PoleProximityWarning(UserWarning):
    pass


class StateLabelingError(RuntimeError):
    """Dressed states cannot be matched unambiguously to bare product states."""


# --- effective coupling ---------------------------------------------------


@dataclass(frozen=True)
class EffectiveCouplingInput:
    g_left: float  # MHz
    g_right: float  # MHz
    g_direct: float  # MHz
    delta_left: float  # GHz, omega_left - omega_coupler
    delta_right: float  # GHz

    def __post_init__(self):
        if self.delta_left == 0 or self.delta_right == 0:
            raise ZeroDivisionError("qubit-coupler detunings must be nonzero")


def effective_coupling(inp: EffectiveCouplingInput) -> float:
    """Total qubit-qubit coupling J = g_d + g1 g2 / Delta in MHz.

    ``1/Delta`` is the mean of the inverse qubit-coupler detunings.
    """
    inv_delta = 0.5 * (1.0 / (1e3 * inp.delta_left) + 1.0 / (1e3 * inp.delta_right))
    return inp.g_direct + inp.g_left * inp.g_right * inv_delta


def coupler_off_frequency(topology: DeviceTopology, k: int, lo: float = None, hi: float = 12.0) -> float:
    """Coupler frequency (GHz) at which the effective coupling of pair k vanishes."""
    if not topology.couplers:
        raise ValueError("topology has no couplers")
    top = max(topology.qubits[k].omega_ge, topology.qubits[k + 1].omega_ge)
    lo = top + 0.05 if lo is None else lo

    def j_of(wc):
        return topology.replace_coupler(k, omega=wc).pair_coupling_mhz(k)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if j_of(lo) * j_of(hi) > 0:
            raise ValueError(f"effective coupling of pair {k} does not change sign in [{lo}, {hi}] GHz")
        return float(brentq(j_of, lo, hi, xtol=1e-12))


# --- charge matrix elements ------------------------------------------------


def epsilon_root(ratio: float) -> float:
    """Positive root of [9-4r] e^2 + 16[1-r] e + 64 r = 0 with r = alpha/omega."""
    r = float(ratio)
    if not (-0.5 < r < 0):
        raise ValueError(f"ratio alpha/omega must lie in (-0.5, 0), got {r}")
    a = 9.0 - 4.0 * r
    b = 16.0 * (1.0 - r)
    c = 64.0 * r
    disc = b * b - 4.0 * a * c
    if disc <= 0:
        raise ValueError("no positive root: discriminant is not positive")
    # cancellation-free form of (-b + sqrt(disc)) / (2a)
    eps = -2.0 * c / (b + math.sqrt(disc))
    if not eps > 0:
        raise ValueError("no positive root")
    return eps


def charge_matrix_elements(eps: float) -> tuple[float, float]:
    """(nu01, nu12) from the second-order epsilon series."""
    if not (0 <= eps < 1):
        raise ValueError(f"epsilon must lie in [0, 1), got {eps}")
    nu01 = 1.0 - eps / 8.0 - 11.0 * eps**2 / 256.0
    nu12 = (1.0 - eps / 4.0 - 73.0 * eps**2 / 512.0) * SQRT2
    return nu01, nu12


def qubit_charge_elements(omega_ghz: float, alpha_ghz: float) -> tuple[float, float]:
    return charge_matrix_elements(epsilon_root(alpha_ghz / omega_ghz))


# --- CR rate --------------------------------------------------------------


@dataclass(frozen=True)
class CRRateInput:
    j: float  # MHz
    omega_drive_amp: float  # MHz
    delta_ct: float  # MHz, control minus target (dressed)
    alpha_control: float  # MHz
    a_c: float = 0.0
    nu_t01: float = 1.0
    nu_c01: float = 1.0
    nu_c12: float = SQRT2

    def __post_init__(self):
        if self.delta_ct == 0 or self.delta_ct + self.alpha_control == 0:
            raise ZeroDivisionError("delta_ct sits on a CR resonance pole")
        if not (0 <= self.a_c < 1):
            raise ValueError(f"a_c must lie in [0, 1), got {self.a_c}")


def cr_rate_u1(inp: CRRateInput) -> float:
    """Lowest-order ZX rate u1 (MHz) of the CR drive.

    Returned verbatim from the energy-basis expression. In this package's
    simulation conventions (RWA drive amplitude Omega/2, Pauli coefficients
    defined by H = sum c_P P) the matching ZX coefficient is ``u1 / 4``; see
    :func:`zx_coefficient_from_u1`.
    """
    d, a = inp.delta_ct, inp.alpha_control
    if abs(d) < 10.0 or abs(d + a) < 10.0:
        warnings.warn(f"delta_ct = {d} MHz is within 10 MHz of a CR pole", PoleProximityWarning, stacklevel=2)
    bracket = inp.nu_t01 * inp.nu_c12**2 / (d + a) - 2.0 * inp.nu_t01 * inp.nu_c01**2 / d
    return inp.j * inp.omega_drive_amp * (1.0 - inp.a_c) * bracket


def zx_coefficient_from_u1(u1: float) -> float:
    return u1 / 4.0


# --- dispersive shift -----------------------------------------------------


def dispersive_shift_chi(g: float, alpha_q: float, alpha_c: float, delta: float) -> float:
    """chi = g^2 (alpha_q + alpha_c) / (2 (delta - alpha_c)(delta + alpha_q)), all MHz.

    Equals a quarter of the exact two-mode ZZ shift to lowest order.
    """
    if delta == alpha_c or delta == -alpha_q:
        raise ZeroDivisionError("dispersive shift pole")
    return g**2 * (alpha_q + alpha_c) / (2.0 * (delta - alpha_c) * (delta + alpha_q))


def two_mode_zz(g: float, omega_a: float, alpha_a: float, omega_b: float, alpha_b: float, truncation: int = 4) -> float:
    """Exact ZZ shift (MHz) of two exchange-coupled Duffing modes, frequencies in GHz, rest in MHz."""
    from .device import PairCoupling, TransmonSpec

    topo = DeviceTopology(
        qubits=(
            TransmonSpec("A", omega_a, alpha_a * 1e-3),
            TransmonSpec("B", omega_b, alpha_b * 1e-3),
        ),
        couplings=(PairCoupling(j=g),),
        truncation=truncation,
    )
    return static_zz_exact(topo, ("A", "B"))


# --- dressed spectrum -----------------------------------------------------


def label_eigenstates(h: np.ndarray, min_overlap: float = 0.5):
    """Diagonalize ``h`` and match each bare basis state to one eigenvector.

    Returns ``(energies_by_basis, vectors_by_basis, overlaps)``; column ``k``
    of ``vectors_by_basis`` is the dressed partner of bare state ``k``.
    """
    evals, evecs = np.linalg.eigh(h)
    weight = np.abs(evecs) ** 2  # [bare, eigen]
    rows, cols = linear_sum_assignment(-weight)
    order = np.empty(len(evals), dtype=int)
    order[rows] = cols
    overlaps = weight[np.arange(len(evals)), order]
    return evals[order], evecs[:, order], overlaps


def dressed_energies(ham, states: Sequence[Sequence[int]], min_overlap: float = 0.5) -> np.ndarray:
    """Dressed energies (rad/ns) of the named product states of ``ham``'s static part."""
    energies, _, overlaps = label_eigenstates(ham.static)
    out = []
    for levels in states:
        k = basis_index(levels, ham.dims)
        if overlaps[k] < min_overlap:
            raise StateLabelingError(
                f"state |{''.join(map(str, levels))}> is strongly hybridized "
                f"(max overlap {overlaps[k]:.3f}); it sits near a level crossing"
            )
        out.append(energies[k])
    return np.array(out)


def track_levels(hamiltonians: Sequence[np.ndarray]) -> np.ndarray:
    """Follow eigenvectors along a parameter path by maximum-overlap continuation.

    Returns energies with shape (steps, dim); column k continues the branch
    that starts on bare state k at the first point.
    """
    e0, v0, _ = label_eigenstates(hamiltonians[0])
    out = [e0]
    prev = v0
    for h in hamiltonians[1:]:
        evals, evecs = np.linalg.eigh(h)
        ov = np.abs(prev.conj().T @ evecs) ** 2
        # ties resolved by energy order through the stable assignment
        rows, cols = linear_sum_assignment(-ov + 1e-12 * np.arange(len(evals))[None, :])
        order = np.empty(len(evals), dtype=int)
        order[rows] = cols
        out.append(evals[order])
        prev = evecs[:, order]
    return np.array(out)


def _pair_levels(ham, labels: Sequence[str]):
    a, b = (ham.mode(lb) for lb in labels)
    base = [0] * len(ham.dims)

    def levels(na, nb):
        lv = list(base)
        lv[a], lv[b] = na, nb
        return lv

    return [levels(0, 0), levels(1, 0), levels(0, 1), levels(1, 1)]


def static_zz_exact(topology: DeviceTopology, pair: Sequence[str], mode: str = "effective_qubits") -> float:
    """xi_ZZ = E11 - E10 - E01 + E00 in MHz, all other modes in their ground state."""
    if topology.truncation < 2:
        raise ValueError("truncation must be >= 2")
    ref = np.mean([topology.qubit(lb).omega_ge for lb in pair])
    ham = build_hamiltonian(topology, mode=mode, frame="rotating_at_drive", frame_frequency=ref)
    e00, e10, e01, e11 = dressed_energies(ham, _pair_levels(ham, pair))
    return rad_to_mhz(e11 - e10 - e01 + e00)


def dressed_qubit_frequencies(topology: DeviceTopology, mode: str = "effective_qubits") -> dict[str, float]:
    """Dressed 0->1 transition frequency (GHz) of each qubit with all others in ground."""
    ref = float(np.mean([q.omega_ge for q in topology.qubits]))
    ham = build_hamiltonian(topology, mode=mode, frame="rotating_at_drive", frame_frequency=ref)
    states = [[0] * len(ham.dims)]
    for lb in topology.labels:
        lv = [0] * len(ham.dims)
        lv[ham.mode(lb)] = 1
        states.append(lv)
    e = dressed_energies(ham, states)
    return {lb: ref + (e[i + 1] - e[0]) / (2 * np.pi) for i, lb in enumerate(topology.labels)}


# --- resonance poles ------------------------------------------------------


@dataclass(frozen=True)
class PoleScan:
    """Detuning scan: ``qubit`` frequency is set to ``reference + x`` for x in MHz."""

    qubit: str
    reference: str
    start: float
    stop: float
    step: float = 5.0

    def __post_init__(self):
        if not self.stop > self.start or not self.step > 0:
            raise ValueError("scan needs start < stop and step > 0")


@dataclass(frozen=True)
class Pole:
    detuning: float  # MHz
    states: tuple[str, str]
    kind: str
    gap: float  # MHz, minimum dressed splitting
    coupling: float  # MHz, largest direct matrix element along the path


@dataclass(frozen=True)
class PoleCatalog:
    poles: tuple[Pole, ...] = field(default=())

    def __iter__(self):
        return iter(self.poles)

    def __len__(self):
        return len(self.poles)

    @property
    def detunings(self) -> np.ndarray:
        return np.array([p.detuning for p in self.poles])

    def near(self, x: float, window: float) -> list[Pole]:
        return [p for p in self.poles if abs(p.detuning - x) <= window]


def _kind(changed: set[str], roles: Mapping[str, str]) -> str:
    tags = sorted(roles.get(lb, lb) for lb in changed)
    if len(tags) == 2:
        joined = "_".join(tags)
        return {
            "control_target": "control_target",
            "control_spectator": "control_spectator",
            "spectator_target": "target_spectator",
        }.get(joined, joined)
    return "multi_qubit"


def find_resonance_poles(
    topology: DeviceTopology,
    scan: PoleScan,
    roles: Optional[Mapping[str, str]] = None,
    mode: str = "effective_qubits",
    max_order: int = 2,
) -> PoleCatalog:
    """Locate avoided crossings met while detuning ``scan.qubit`` from ``scan.reference``.

    Candidates are pairs of bare states in the same excitation manifold, at
    least one of them computational, connected by at most ``max_order``
    coupling steps. Each bare crossing is refined on the dressed spectrum by
    minimizing the gap between the two eigenstates carrying the pair's weight.
    """
    roles = dict(roles or {})
    ref_freq = topology.qubit(scan.reference).omega_ge

    def ham_at(x):
        topo = topology.replace_qubit(scan.qubit, omega_ge=ref_freq + 1e-3 * x)
        return build_hamiltonian(topo, mode=mode, frame="rotating_at_drive", frame_frequency=ref_freq)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        h_lo = ham_at(scan.start)
        h_hi = ham_at(scan.stop)
    dims = h_lo.dims
    labels = h_lo.labels
    dim = h_lo.dim
    occ = np.indices(dims).reshape(len(dims), -1)
    excitations = occ.sum(axis=0)
    qubit_modes = h_lo.qubit_modes()
    computational = np.all(occ <= 1, axis=0) & np.all(occ[[i for i in range(len(dims)) if i not in qubit_modes]] == 0, axis=0)
    k_scan = labels.index(scan.qubit)

    off = np.abs(h_lo.static - np.diag(np.diag(h_lo.static)))
    adj = off > 1e-12
    reach = adj.copy()
    hop = adj.copy()
    for _ in range(max_order - 1):
        hop = (hop.astype(int) @ adj.astype(int)) > 0
        reach |= hop
    diag_lo = np.real(np.diag(h_lo.static))
    diag_hi = np.real(np.diag(h_hi.static))

    step_tol = scan.step / 100.0
    poles = []
    for s in range(dim):
        for t in range(s + 1, dim):
            if excitations[s] != excitations[t] or not reach[s, t]:
                continue
            if not (computational[s] or computational[t]):
                continue
            if occ[k_scan, s] == occ[k_scan, t]:
                continue
            d_lo = diag_lo[s] - diag_lo[t]
            d_hi = diag_hi[s] - diag_hi[t]
            if d_lo * d_hi > 0:
                continue

            def bare_diff(x, s=s, t=t):
                d = np.real(np.diag(ham_at(x).static))
                return d[s] - d[t]

            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                x0 = brentq(bare_diff, scan.start, scan.stop, xtol=step_tol)
            if adj[s, t]:
                coupling = off[s, t]
            else:
                mids = np.nonzero(adj[s] & adj[:, t])[0]
                coupling = max(max(off[s, m], off[m, t]) for m in mids) if len(mids) else off[s].max()
            pole = _refine_pole(ham_at, s, t, x0, scan, coupling)
            if pole is None:
                continue
            x_min, gap = pole
            changed = {labels[i] for i in range(len(dims)) if occ[i, s] != occ[i, t]}
            poles.append(
                Pole(
                    detuning=float(x_min),
                    states=(_ket(occ[:, s]), _ket(occ[:, t])),
                    kind=_kind(changed, roles),
                    gap=float(rad_to_mhz(gap)),
                    coupling=float(rad_to_mhz(coupling)),
                )
            )
    poles.sort(key=lambda p: p.detuning)
    return PoleCatalog(tuple(poles))


def _ket(levels) -> str:
    return "|" + "".join(str(int(v)) for v in levels) + ">"


def _refine_pole(ham_at, s, t, x0, scan, coupling):
    half = max(2.0 * scan.step, 10.0)
    lo, hi = max(scan.start, x0 - half), min(scan.stop, x0 + half)

    def gap(x):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            evals, evecs = np.linalg.eigh(ham_at(x).static)
        w = np.abs(evecs[s]) ** 2 + np.abs(evecs[t]) ** 2
        a, b = np.argsort(w)[-2:]
        return abs(evals[a] - evals[b])

    res = minimize_scalar(gap, bounds=(lo, hi), method="bounded", options={"xatol": scan.step / 100.0})
    x_min, g_min = float(res.x), float(res.fun)
    edge = scan.step / 50.0
    interior = (x_min - lo > edge or lo == scan.start) and (hi - x_min > edge or hi == scan.stop)
    curved = gap(max(lo, x_min - edge)) >= g_min and gap(min(hi, x_min + edge)) >= g_min
    if g_min < 2.0 * coupling and interior and curved:
        return x_min, g_min
    return None
