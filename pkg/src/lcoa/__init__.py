"""Learnable collaborative attention on 2-D feature maps.

A numpy-based library and benchmark/CLI for windowed sparse attention with a
clustering-derived, weight-shared attention plan, plus a forward-only toy
super-resolution network built on it.
"""

from .benchmark import (
    CSV_HEADER,
    MODES,
    AllocationTracker,
    BenchRecord,
    BenchWeights,
    make_bench_weights,
    make_features,
    run_benchmark,
    run_pipeline,
    write_csv,
)
from .clustering import SphericalKMeans, assign_clusters, ema_centroid_update
from .collaborative import CoaLayer, coa_forward
from .dense_attention import (
    NlaWeights,
    attention_vjp,
    dense_attention_output,
    nla_forward,
    project_qkv,
)
from .image_io import (
    PpmDepthError,
    PpmError,
    PpmMagicError,
    PpmTruncatedError,
    read_ppm,
    write_ppm,
)
from .metrics import PSNR_CAP_DB, feature_psnr, luma, psnr_y
from .network import (
    CollaborativeSuperResolver,
    NetConfig,
    config_from_weights,
    conv2d_3x3,
    lcoan_forward,
    nla_variant_weights,
    pixel_shuffle,
    synthesize_weights,
    tensor_inventory,
    validate_weights,
)
from .sparse_plan import (
    AttentionPlan,
    SharedWeights,
    build_plan,
    lsp_forward,
    sparse_attention_apply,
    sparse_attention_weights,
)
from .tensor_ops import (
    gather_rows,
    l2_normalize_rows,
    linear_map,
    matmul,
    op_counters,
    row_softmax,
    scatter_rows,
)
from .validation import NonFiniteError, ShapeError
from .weights_io import (
    BadMagicError,
    DimensionError,
    ModelWeights,
    TruncatedFileError,
    VersionMismatchError,
    WeightsIOError,
    load_weights,
    save_weights,
)

__version__ = "0.1.0"

__all__ = [
    "AllocationTracker",
    "AttentionPlan",
    "BadMagicError",
    "BenchRecord",
    "BenchWeights",
    "CSV_HEADER",
    "CoaLayer",
    "CollaborativeSuperResolver",
    "DimensionError",
    "MODES",
    "ModelWeights",
    "NetConfig",
    "NlaWeights",
    "NonFiniteError",
    "PSNR_CAP_DB",
    "PpmDepthError",
    "PpmError",
    "PpmMagicError",
    "PpmTruncatedError",
    "ShapeError",
    "SharedWeights",
    "SphericalKMeans",
    "TruncatedFileError",
    "VersionMismatchError",
    "WeightsIOError",
    "__version__",
    "assign_clusters",
    "attention_vjp",
    "build_plan",
    "coa_forward",
    "config_from_weights",
    "conv2d_3x3",
    "dense_attention_output",
    "ema_centroid_update",
    "feature_psnr",
    "gather_rows",
    "l2_normalize_rows",
    "lcoan_forward",
    "linear_map",
    "load_weights",
    "lsp_forward",
    "luma",
    "make_bench_weights",
    "make_features",
    "matmul",
    "nla_forward",
    "nla_variant_weights",
    "op_counters",
    "pixel_shuffle",
    "project_qkv",
    "psnr_y",
    "read_ppm",
    "row_softmax",
    "run_benchmark",
    "run_pipeline",
    "save_weights",
    "scatter_rows",
    "sparse_attention_apply",
    "sparse_attention_weights",
    "synthesize_weights",
    "tensor_inventory",
    "validate_weights",
    "write_csv",
    "write_ppm",
]
