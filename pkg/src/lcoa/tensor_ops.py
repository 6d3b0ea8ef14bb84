"""Dense tensor primitives with a fixed precision policy.

Storage is float32 throughout; accumulations run in float64 (matrix products
are computed on float64 upcasts in fixed row blocks, softmax denominators are
float64 sums) and results are rounded back to float32.  The block schedule is
a pure function of the operand shapes, so results are bit-identical across
runs and across BLAS thread counts.

Feature maps are row-major (h, w, c); a map flattens to an (h*w, c) matrix
with position index i = y*w + x.
"""

from __future__ import annotations

import numpy as np

from .validation import ShapeError, check_matrix, check_permutation

# float64 scratch per matmul block, in bytes
_BLOCK_BYTES = 64 * 2**20


class OpCounters:
    """Cheap global counters for structurally significant operations.

    Used by tests to verify call-count contracts (for example, that the
    collaborative layer performs exactly one gather and one scatter per call
    and that the shared attention plan is built exactly once per forward).
    """

    def __init__(self) -> None:
        self.reset()

    def reset(self) -> None:
        self.gather_calls = 0
        self.scatter_calls = 0
        self.plan_builds = 0


op_counters = OpCounters()


def matmul(a, b) -> np.ndarray:
    """Matrix product with float64 accumulation, rounded to float32.

    ``a`` is processed in row blocks sized so the float64 scratch stays
    bounded; each output element is a single float64 dot product regardless
    of blocking, which keeps the reduction order fixed.
    """
    a = check_matrix(a, "a")
    b = check_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: a is {a.shape}, b is {b.shape}"
        )
    m, n = a.shape[0], b.shape[1]
    b64 = b.astype(np.float64)
    out = np.empty((m, n), dtype=np.float32)
    block = max(1, _BLOCK_BYTES // (8 * max(1, n)))
    # values beyond float32 range round to +-inf here; callers with a
    # finiteness contract detect that at their stage checks
    with np.errstate(over="ignore"):
        for i0 in range(0, m, block):
            i1 = min(m, i0 + block)
            out[i0:i1] = (a[i0:i1].astype(np.float64) @ b64).astype(np.float32)
    return out


def linear_map(x, w) -> np.ndarray:
    """Apply a per-row linear map: each row of ``x`` is multiplied by ``w``.

    Equivalent to a 1x1 convolution over a flattened feature map.
    """
    return matmul(x, w)


def row_softmax(a) -> np.ndarray:
    """Row-wise softmax with max subtraction; all entries must be finite.

    Each row is shifted by its maximum before exponentiation, the denominator
    is a float64 sum, and the result is float32.  Rows of equal logits come
    out exactly uniform.
    """
    a = check_matrix(a, "a")
    if not np.all(np.isfinite(a)):
        raise ShapeError("row_softmax requires finite entries")
    # the shift can underflow to -inf for extreme logit spreads; exp maps
    # that to exactly 0, which is the intended stable limit
    with np.errstate(over="ignore"):
        shifted = a - np.max(a, axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    denom = np.sum(shifted, axis=1, keepdims=True, dtype=np.float64)
    shifted /= denom.astype(np.float32)
    return shifted


def l2_normalize_rows(a, eps: float = 1e-12) -> np.ndarray:
    """Scale each row to unit Euclidean norm.

    Rows with norm below ``eps`` are passed through unchanged rather than
    divided toward infinity.  Idempotent up to float32 rounding.
    """
    a = check_matrix(a, "a")
    norms = np.sqrt(np.sum(a.astype(np.float64) ** 2, axis=1, keepdims=True))
    safe = np.where(norms < eps, 1.0, norms)
    out = (a / safe.astype(np.float32)).astype(np.float32)
    return out


def gather_rows(a, perm) -> np.ndarray:
    """Reorder rows so output row i is ``a[perm[i]]``. ``perm`` must be a bijection."""
    a = check_matrix(a, "a")
    perm = check_permutation(perm, a.shape[0])
    op_counters.gather_calls += 1
    return a[perm]


def scatter_rows(a, perm) -> np.ndarray:
    """Inverse of :func:`gather_rows`: row i of ``a`` is written to position ``perm[i]``.

    ``scatter_rows(gather_rows(a, p), p)`` returns ``a`` bit-exactly.
    """
    a = check_matrix(a, "a")
    perm = check_permutation(perm, a.shape[0])
    op_counters.scatter_calls += 1
    out = np.empty_like(a)
    out[perm] = a
    return out
