"""Dense non-local attention over flattened feature maps.

This is the quadratic reference path: every position attends to every other
position.  It serves as the correctness baseline for the windowed sparse
kernel and as the dense arm of the benchmark.  Logits are raw dot products
``q @ k.T`` with no scale factor; normalization is a plain row softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_ops import linear_map, matmul, row_softmax
from .validation import ShapeError, check_finite, check_matrix


@dataclass
class NlaWeights:
    """Projection weights for one dense attention layer.

    w_q, w_k, w_v map input channels c to projected channels c_hat; w_o maps
    back from c_hat to c for the residual sum.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    def __post_init__(self) -> None:
        self.w_q = check_matrix(self.w_q, "w_q")
        c, c_hat = self.w_q.shape
        self.w_k = check_matrix(self.w_k, "w_k", rows=c, cols=c_hat)
        self.w_v = check_matrix(self.w_v, "w_v", rows=c, cols=c_hat)
        self.w_o = check_matrix(self.w_o, "w_o", rows=c_hat, cols=c)
        for name in ("w_q", "w_k", "w_v", "w_o"):
            check_finite(getattr(self, name), f"NlaWeights.{name}")

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @property
    def projected_channels(self) -> int:
        return self.w_q.shape[1]


def project_qkv(x, weights: NlaWeights):
    """Project flattened features (n, c) to query/key/value matrices (n, c_hat)."""
    x = check_matrix(x, "x", cols=weights.channels)
    q = linear_map(x, weights.w_q)
    k = linear_map(x, weights.w_k)
    v = linear_map(x, weights.w_v)
    return q, k, v


def dense_attention_output(q, k, v) -> np.ndarray:
    """Pre-projection attention output ``row_softmax(q @ k.T) @ v``."""
    q = check_matrix(q, "q")
    k = check_matrix(k, "k", cols=q.shape[1])
    v = check_matrix(v, "v", rows=k.shape[0])
    scores = matmul(q, k.T)
    probs = row_softmax(scores)
    return matmul(probs, v)


def nla_forward(x, weights: NlaWeights) -> np.ndarray:
    """Dense attention layer with residual: ``x + (attention output) @ w_o``.

    Every intermediate is checked for finiteness; a failure is reported with
    the name of the stage that produced it.
    """
    x = check_matrix(x, "x", cols=weights.channels)
    check_finite(x, "input")
    q, k, v = project_qkv(x, weights)
    check_finite(q, "query projection")
    check_finite(k, "key projection")
    check_finite(v, "value projection")
    scores = matmul(q, k.T)
    check_finite(scores, "attention scores")
    probs = row_softmax(scores)
    check_finite(probs, "softmax")
    attended = matmul(probs, v)
    check_finite(attended, "weighted sum")
    y = x + linear_map(attended, weights.w_o)
    check_finite(y, "output")
    return y


def attention_vjp(q, k, v, d_out):
    """Gradients of ``dense_attention_output`` with respect to q, k, v.

    Given the cotangent ``d_out`` of the pre-projection output, returns
    (d_q, d_k, d_v).  The softmax backward runs in float64 and results are
    rounded to float32.
    """
    q = check_matrix(q, "q")
    k = check_matrix(k, "k", cols=q.shape[1])
    v = check_matrix(v, "v", rows=k.shape[0])
    d_out = check_matrix(d_out, "d_out", rows=q.shape[0], cols=v.shape[1])

    scores = matmul(q, k.T)
    probs = row_softmax(scores)

    d_v = matmul(probs.T, d_out)
    d_probs = matmul(d_out, v.T)

    p64 = probs.astype(np.float64)
    g64 = d_probs.astype(np.float64)
    inner = np.sum(p64 * g64, axis=1, keepdims=True)
    d_scores = (p64 * (g64 - inner)).astype(np.float32)

    d_q = matmul(d_scores, k)
    d_k = matmul(d_scores.T, q)
    return d_q, d_k, d_v
