"""Input validation helpers shared across the package.

All public entry points funnel their array arguments through these checks so
that shape and finiteness errors surface with a consistent message instead of
deep inside a BLAS call.
"""

from __future__ import annotations

import numpy as np


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce ``x`` to a 2-d float64 array, rejecting NaN/Inf entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce ``x`` to a 1-d float64 array, rejecting NaN/Inf entries."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-dimensional, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return arr


def check_positive_int(value: int, name: str) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return int(value)


def check_sequences(sequences, name: str = "sequences") -> list[np.ndarray]:
    """Validate a corpus of sequences: nonempty list of (length, width) arrays
    sharing a common width. Returns float64 copies."""
    if not sequences:
        raise ValueError(f"{name} is empty: at least one sequence is required")
    out = []
    width = None
    for idx, seq in enumerate(sequences):
        arr = as_matrix(seq, name=f"{name}[{idx}]")
        if arr.shape[0] < 1:
            raise ValueError(f"{name}[{idx}] has zero timesteps")
        if width is None:
            width = arr.shape[1]
        elif arr.shape[1] != width:
            raise ValueError(
                f"{name}[{idx}] has {arr.shape[1]} features, expected {width}"
            )
        out.append(arr)
    return out


def check_shapes_match(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{name_a} shape {a.shape} != {name_b} shape {b.shape}")
