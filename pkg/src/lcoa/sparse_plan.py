"""Windowed sparse attention driven by a cluster-sorted permutation.

Positions are sorted by (cluster label, position index) with a stable sort
and cut into fixed-size windows.  Each window's queries attend to the key
slots of the immediately preceding window plus their own window; window 0
spans only itself.  When the window size does not divide n, the tail window
is filled by replicating the last permuted position; such pad slots receive
-inf logits as keys (zero weight after softmax) and their query rows are
discarded on the way back.

The per-window weight tensor is laid out uniformly as
``(num_windows, window_size, 2 * window_size)``: the span of window w covers
an extended sequence that starts with one window of dummy slots, so the span
of every window is the slice ``[w * window_size, (w + 2) * window_size)`` of
that extended sequence.  Dummy and pad slots are marked invalid in
``key_valid`` and carry exactly zero weight.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .clustering import SphericalKMeans
from .tensor_ops import gather_rows, matmul, op_counters, scatter_rows
from .validation import ShapeError, check_finite, check_matrix, check_permutation


@dataclass
class AttentionPlan:
    """A reusable sparse attention layout for one feature arrangement.

    Attributes
    ----------
    perm : ndarray of shape (n,)
        Stable permutation sorting positions by (cluster label, index).
    window_size : int
        Queries per window.
    num_windows : int
        ``ceil(n / window_size)``.
    pad_count : int
        Replicated tail slots, ``num_windows * window_size - n``.
    span_previous : bool
        Whether windows after the first also attend to the preceding window.
    """

    perm: np.ndarray
    window_size: int
    num_windows: int
    pad_count: int
    span_previous: bool = True

    def __post_init__(self) -> None:
        n = self.num_windows * self.window_size - self.pad_count
        self.perm = check_permutation(self.perm, n)
        if self.window_size < 1:
            raise ShapeError(f"window_size must be positive, got {self.window_size}")
        if not 0 <= self.pad_count < self.window_size:
            raise ShapeError(
                f"pad_count must lie in [0, window_size), got {self.pad_count}"
            )

    @property
    def n(self) -> int:
        return int(self.perm.shape[0])

    @property
    def padded_len(self) -> int:
        return self.num_windows * self.window_size

    def span_slots(self, window: int) -> int:
        """Key slots attended by queries of ``window`` (pad slots included)."""
        if window == 0 or not self.span_previous:
            return self.window_size
        return 2 * self.window_size

    @property
    def nbytes(self) -> int:
        return int(self.perm.nbytes)


@dataclass
class SharedWeights:
    """Row-stochastic per-window attention weights, shareable across layers.

    ``weights[w]`` has shape (window_size, 2 * window_size) over the extended
    span of window w; ``key_valid[w]`` marks which of those slots hold real
    keys.  Invalid slots carry exactly zero weight and every row sums to 1.
    """

    weights: np.ndarray
    key_valid: np.ndarray
    window_size: int
    n: int

    @property
    def nbytes(self) -> int:
        return int(self.weights.nbytes + self.key_valid.nbytes)


def build_plan(labels, window_size: int) -> AttentionPlan:
    """Sort positions by (label, index) and cut them into fixed windows."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] < 1:
        raise ShapeError(f"labels must be a non-empty 1-D array, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ShapeError(f"labels must be integers, got dtype {labels.dtype}")
    if window_size < 1:
        raise ShapeError(f"window_size must be positive, got {window_size}")
    n = labels.shape[0]
    perm = np.argsort(labels, kind="stable").astype(np.int64)
    num_windows = -(-n // window_size)
    pad_count = num_windows * window_size - n
    op_counters.plan_builds += 1
    return AttentionPlan(
        perm=perm,
        window_size=window_size,
        num_windows=num_windows,
        pad_count=pad_count,
    )


def _extend_sorted(rows: np.ndarray, plan: AttentionPlan) -> np.ndarray:
    """Prepend a dummy window and append pad replicas to permuted rows."""
    ws = plan.window_size
    dummy = np.zeros((ws, rows.shape[1]), dtype=np.float32)
    if plan.pad_count:
        pad = np.repeat(rows[-1:], plan.pad_count, axis=0)
        return np.concatenate([dummy, rows, pad], axis=0)
    return np.concatenate([dummy, rows], axis=0)


def _extended_valid(plan: AttentionPlan) -> np.ndarray:
    """Validity of extended slots: dummy and pad slots are invalid."""
    ext_len = plan.padded_len + plan.window_size
    idx = np.arange(ext_len)
    return (idx >= plan.window_size) & (idx < plan.window_size + plan.n)


def _window_weights(q_block: np.ndarray, k_span: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Masked row softmax of ``q_block @ k_span.T`` over valid key slots."""
    logits = matmul(q_block, k_span.T)
    logits[:, ~valid] = -np.inf
    with np.errstate(over="ignore"):
        shifted = logits - np.max(logits, axis=1, keepdims=True)
    probs = np.exp(shifted)
    denom = np.sum(probs, axis=1, keepdims=True, dtype=np.float64)
    probs /= denom.astype(np.float32)
    return probs


def sparse_attention_weights(q, k, plan: AttentionPlan, parallel: bool = False) -> SharedWeights:
    """Compute the shared per-window attention weights for a plan.

    Logits are raw dot products of the unnormalized projections, matching
    the dense path; normalization onto the sphere is only used upstream for
    cluster assignment.
    """
    q = check_matrix(q, "q", rows=plan.n)
    k = check_matrix(k, "k", rows=plan.n, cols=q.shape[1])
    check_finite(q, "sparse weights: queries")
    check_finite(k, "sparse weights: keys")

    ws = plan.window_size
    q_sorted = gather_rows(q, plan.perm)
    if plan.pad_count:
        q_padded = np.concatenate(
            [q_sorted, np.repeat(q_sorted[-1:], plan.pad_count, axis=0)], axis=0
        )
    else:
        q_padded = q_sorted
    k_ext = _extend_sorted(gather_rows(k, plan.perm), plan)
    ext_valid = _extended_valid(plan)

    weights = np.empty((plan.num_windows, ws, 2 * ws), dtype=np.float32)
    key_valid = np.empty((plan.num_windows, 2 * ws), dtype=bool)

    def fill(w: int) -> None:
        lo = w * ws
        valid = ext_valid[lo : lo + 2 * ws]
        key_valid[w] = valid
        weights[w] = _window_weights(q_padded[lo : lo + ws], k_ext[lo : lo + 2 * ws], valid)

    if parallel and plan.num_windows > 1:
        with ThreadPoolExecutor(max_workers=min(4, plan.num_windows)) as pool:
            list(pool.map(fill, range(plan.num_windows)))
    else:
        for w in range(plan.num_windows):
            fill(w)
    return SharedWeights(weights=weights, key_valid=key_valid, window_size=ws, n=plan.n)


def sparse_attention_apply(shared: SharedWeights, plan: AttentionPlan, v, parallel: bool = False) -> np.ndarray:
    """Apply shared weights to values: gather by the plan, per-window
    multiply over each span, scatter back to original positions.

    Performs exactly one gather and one scatter; pad-slot outputs are
    discarded.
    """
    if shared.window_size != plan.window_size or shared.n != plan.n:
        raise ShapeError(
            f"weights built for n={shared.n}, window={shared.window_size} do not "
            f"match plan n={plan.n}, window={plan.window_size}"
        )
    v = check_matrix(v, "v", rows=plan.n)

    ws = plan.window_size
    v_ext = _extend_sorted(gather_rows(v, plan.perm), plan)
    out_sorted = np.empty((plan.padded_len, v.shape[1]), dtype=np.float32)

    def fill(w: int) -> None:
        lo = w * ws
        out_sorted[lo : lo + ws] = matmul(shared.weights[w], v_ext[lo : lo + 2 * ws])

    if parallel and plan.num_windows > 1:
        with ThreadPoolExecutor(max_workers=min(4, plan.num_windows)) as pool:
            list(pool.map(fill, range(plan.num_windows)))
    else:
        for w in range(plan.num_windows):
            fill(w)
    return scatter_rows(out_sorted[: plan.n], plan.perm)


def lsp_forward(
    x1,
    w_q,
    w_k,
    state: SphericalKMeans,
    window_size: int,
    update_state: bool = False,
    parallel: bool = False,
):
    """Build the shared sparse attention map from shallow features.

    Projects queries and keys from ``x1``, assigns clusters on the unit
    sphere, optionally runs one centroid EMA round (``update_state=True``),
    sorts positions into windows, and computes the shared weights.  Returns
    ``(shared_weights, plan, state)``; in inference mode the state is
    returned unchanged bit-exactly.
    """
    x1 = np.asarray(x1)
    if x1.ndim == 3:
        x1 = x1.reshape(-1, x1.shape[2])
    x1 = check_matrix(x1, "x1")
    w_q = check_matrix(w_q, "w_q", rows=x1.shape[1])
    w_k = check_matrix(w_k, "w_k", rows=x1.shape[1], cols=w_q.shape[1])

    q = matmul(x1, w_q)
    k = matmul(x1, w_k)
    labels = state.predict(q)
    if update_state:
        state.partial_fit(q, k)
    plan = build_plan(labels, window_size)
    shared = sparse_attention_weights(q, k, plan, parallel=parallel)
    return shared, plan, state
