"""Flux-line crosstalk: response-matrix inversion and control-vector correction."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class CrosstalkWarning(UserWarning):
    pass


class ConditioningError(np.linalg.LinAlgError):
    pass


MAX_CONDITION = 1e6


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """Linear response of every line frequency to every flux line, rows/columns in ``labels`` order."""

    matrix: np.ndarray
    labels: tuple[str, ...] = ()
    condition_number: Optional[float] = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"response matrix must be square, got shape {m.shape}")
        labels = tuple(self.labels) or tuple(f"L{i}" for i in range(m.shape[0]))
        if len(labels) != m.shape[0]:
            raise ValueError("label count does not match matrix size")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def is_diagonally_dominant(self, diag_tol: float = 0.02, off_tol: float = 0.05) -> bool:
        m = self.matrix
        off = m - np.diag(np.diag(m))
        return bool(np.all(np.abs(np.diag(m) - 1) <= diag_tol) and np.all(np.abs(off) < off_tol))


def invert_response(m: ResponseMatrix) -> ResponseMatrix:
    """Inverse response matrix; warns when the input is not near-identity."""
    cond = float(np.linalg.cond(m.matrix))
    if not np.isfinite(cond) or cond >= MAX_CONDITION:
        raise ConditioningError(f"response matrix condition number {cond:.3g} exceeds {MAX_CONDITION:.0e}")
    if not m.is_diagonally_dominant():
        warnings.warn("response matrix is not diagonally dominant", CrosstalkWarning, stacklevel=2)
    return ResponseMatrix(np.linalg.inv(m.matrix), m.labels, cond)


def apply_correction(correction: ResponseMatrix, desired: Sequence[float]) -> np.ndarray:
    """Actuated control vector ``M~ @ desired``."""
    v = np.asarray(desired, dtype=float)
    if v.shape != (correction.size,):
        raise ValueError(f"control vector has shape {v.shape}, expected ({correction.size},)")
    return correction.matrix @ v


def load_response_csv(path) -> ResponseMatrix:
    """Read a matrix table whose first row holds the line labels."""
    with open(Path(path), newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    labels = tuple(s.strip() for s in rows[0])
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return ResponseMatrix(data, labels)


def save_response_csv(m: ResponseMatrix, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(m.labels)
        for row in m.matrix:
            w.writerow([repr(float(x)) for x in row])


def printed_correction_matrix() -> ResponseMatrix:
    """The bundled 12 x 12 correction matrix (lines Q1, C1, Q2, C2, ... C6)."""
    from . import data_path

    return load_response_csv(data_path("flux_correction.csv"))
