"""Unit conversion between external (GHz/MHz, ns/us) and internal (rad/ns) values.

All Hamiltonians and propagators inside the package work in angular frequency
with time in nanoseconds. Conversions happen only at module boundaries.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi


def ghz_to_rad(f_ghz):
    return TWO_PI * np.asarray(f_ghz, dtype=float) if np.ndim(f_ghz) else TWO_PI * float(f_ghz)


def mhz_to_rad(f_mhz):
    return TWO_PI * 1e-3 * np.asarray(f_mhz, dtype=float) if np.ndim(f_mhz) else TWO_PI * 1e-3 * float(f_mhz)


def rad_to_ghz(w):
    return np.asarray(w, dtype=float) / TWO_PI if np.ndim(w) else float(w) / TWO_PI


def rad_to_mhz(w):
    return np.asarray(w, dtype=float) * 1e3 / TWO_PI if np.ndim(w) else float(w) * 1e3 / TWO_PI


def us_to_ns(t_us: float) -> float:
    return float(t_us) * 1e3
