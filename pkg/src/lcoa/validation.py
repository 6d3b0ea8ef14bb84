"""Input validation helpers shared across the package.

All numeric payloads in this package are float32 numpy arrays.  These helpers
normalize inputs to that convention and raise errors that name the offending
argument, so shape bugs surface at module boundaries instead of deep inside a
kernel.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """An array does not have the shape or dtype a routine requires."""


class NonFiniteError(ValueError):
    """A tensor contains NaN or infinity at a stage that requires finite data."""


def check_matrix(a, name: str = "x", rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate a 2-D float32 matrix and return it C-contiguous.

    Parameters
    ----------
    a : array-like
        Candidate matrix.
    name : str
        Argument name used in error messages.
    rows, cols : int, optional
        Expected dimensions; checked when given.
    """
    a = np.ascontiguousarray(a, dtype=np.float32)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"{name} must have positive dimensions, got shape {a.shape}")
    if rows is not None and a.shape[0] != rows:
        raise ShapeError(f"{name} must have {rows} rows, got shape {a.shape}")
    if cols is not None and a.shape[1] != cols:
        raise ShapeError(f"{name} must have {cols} columns, got shape {a.shape}")
    return a


def check_feature_map(x, name: str = "x", channels: int | None = None) -> np.ndarray:
    """Validate an (h, w, c) float32 feature map and return it C-contiguous."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeError(f"{name} must be 3-D (h, w, c), got shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name} must have positive dimensions, got shape {x.shape}")
    if channels is not None and x.shape[2] != channels:
        raise ShapeError(f"{name} must have {channels} channels, got shape {x.shape}")
    return x


def check_finite(a: np.ndarray, stage: str) -> np.ndarray:
    """Raise NonFiniteError naming ``stage`` if ``a`` has NaN or infinite entries."""
    if not np.all(np.isfinite(a)):
        bad = int(np.size(a) - np.count_nonzero(np.isfinite(a)))
        raise NonFiniteError(f"non-finite values ({bad} entries) at stage: {stage}")
    return a


def check_permutation(p, n: int, name: str = "perm") -> np.ndarray:
    """Validate that ``p`` is a permutation of 0..n-1 and return it as int64."""
    p = np.asarray(p)
    if p.ndim != 1 or p.shape[0] != n:
        raise ShapeError(f"{name} must be 1-D with {n} entries, got shape {p.shape}")
    if not np.issubdtype(p.dtype, np.integer):
        raise ShapeError(f"{name} must be an integer array, got dtype {p.dtype}")
    p = p.astype(np.int64, copy=False)
    seen = np.zeros(n, dtype=bool)
    valid = (p >= 0) & (p < n)
    if not valid.all():
        raise ShapeError(f"{name} has out-of-range entries for n={n}")
    seen[p] = True
    if not seen.all():
        raise ShapeError(f"{name} is not a bijection over 0..{n - 1}")
    return p
