"""Collaborative attention layers that share one attention map.

A collaborative layer carries no query/key projections of its own.  It
reuses shared per-window weights computed once from shallow features and
contributes only a value projection, an output projection, and a scalar
residual gain:

    y = x + beta * ((shared weights applied to x @ w_m) @ w_out)

Applying the shared weights performs exactly one gather and one scatter; no
re-sorting or re-clustering happens per layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparse_plan import AttentionPlan, SharedWeights, sparse_attention_apply
from .tensor_ops import linear_map
from .validation import check_finite, check_matrix


@dataclass
class CoaLayer:
    """Per-layer parameters of a collaborative attention layer.

    w_m maps input channels c to value channels c_hat, w_out maps back, and
    beta scales the attention branch before the residual sum.
    """

    w_m: np.ndarray
    w_out: np.ndarray
    beta: float = 1.0

    def __post_init__(self) -> None:
        self.w_m = check_matrix(self.w_m, "w_m")
        c, c_hat = self.w_m.shape
        self.w_out = check_matrix(self.w_out, "w_out", rows=c_hat, cols=c)
        check_finite(self.w_m, "CoaLayer.w_m")
        check_finite(self.w_out, "CoaLayer.w_out")
        self.beta = float(self.beta)

    @classmethod
    def identity_output(cls, w_m: np.ndarray, beta: float = 1.0) -> "CoaLayer":
        """Layer whose output projection is the identity (square case)."""
        w_m = check_matrix(w_m, "w_m")
        return cls(w_m=w_m, w_out=np.eye(w_m.shape[1], w_m.shape[0], dtype=np.float32), beta=beta)

    def param_count(self) -> int:
        return int(self.w_m.size + self.w_out.size + 1)


def coa_forward(
    x_m,
    layer: CoaLayer,
    shared: SharedWeights,
    plan: AttentionPlan,
    parallel: bool = False,
) -> np.ndarray:
    """One collaborative layer forward pass over flattened features (n, c)."""
    x_m = check_matrix(x_m, "x_m", rows=plan.n, cols=layer.w_m.shape[0])
    v = linear_map(x_m, layer.w_m)
    attended = sparse_attention_apply(shared, plan, v, parallel=parallel)
    return x_m + np.float32(layer.beta) * linear_map(attended, layer.w_out)
