"""Timing and memory harness comparing three attention pipelines.

Modes
-----
``nla``
    Every layer runs the dense attention oracle (quadratic in the feature
    count).
``lsp``
    Every layer builds its own clustering plan and runs windowed sparse
    attention.
``lcoa``
    One plan and one shared sparse weight tensor are built from the input
    features, then every layer applies collaborative attention through them.

All three pipelines are composed from the same public operations the library
exports — the dense layer is arithmetic-identical to
:func:`lcoa.dense_attention.nla_forward` and the collaborative step to
:func:`lcoa.collaborative.coa_forward` (pinned by tests) — with an
:class:`AllocationTracker` recording every tensor buffer the pipeline holds,
so peak numbers are deterministic sums of buffer sizes rather than OS
measurements.  Layer weights are shared across modes at equal seed, which
makes the sparse outputs directly comparable to the dense reference.

Timing takes one untimed warmup pass followed by ``repeats`` timed passes
and reports the median.  A run that exhausts memory is recorded as a failed
row (empty time and quality cells), not a crash.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .clustering import SphericalKMeans
from .dense_attention import NlaWeights, project_qkv
from .metrics import feature_psnr
from .network import NetConfig
from .sparse_plan import build_plan, sparse_attention_apply, sparse_attention_weights
from .tensor_ops import l2_normalize_rows, linear_map, matmul, op_counters, row_softmax
from .validation import ShapeError

CSV_HEADER = "mode,n,h,w,layers,wall_time_s,peak_alloc_bytes,psnr_db"

MODES = ("nla", "lsp", "lcoa")


class AllocationTracker:
    """Deterministic accounting of pipeline-held tensor buffers.

    ``add``/``drop`` accept anything with an ``nbytes`` attribute (arrays,
    plans, shared weight bundles).  Only buffers a pipeline deliberately
    holds are counted; scratch internal to an operation is excluded
    uniformly across modes.
    """

    def __init__(self) -> None:
        self.current_bytes = 0
        self.peak_bytes = 0

    def add(self, *buffers) -> None:
        for buf in buffers:
            self.current_bytes += int(buf.nbytes)
        self.peak_bytes = max(self.peak_bytes, self.current_bytes)

    def drop(self, *buffers) -> None:
        for buf in buffers:
            self.current_bytes -= int(buf.nbytes)
        if self.current_bytes < 0:
            raise ValueError("tracker dropped more bytes than were added")


@dataclass
class BenchRecord:
    """One benchmark row; ``wall_time_s`` of None marks a failed run."""

    mode: str
    n: int
    h: int
    w: int
    layers: int
    wall_time_s: float | None
    peak_alloc_bytes: int
    psnr_db: float | None = None
    plan_builds: int = 0  # diagnostic, not part of the CSV schema

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if min(self.n, self.h, self.w, self.layers) < 1:
            raise ValueError("n, h, w, and layers must be positive")
        if self.wall_time_s is not None:
            if self.wall_time_s < 0:
                raise ValueError("wall_time_s must be non-negative")
            if self.peak_alloc_bytes <= 0:
                raise ValueError("peak_alloc_bytes must be positive for completed runs")

    @property
    def failed(self) -> bool:
        return self.wall_time_s is None

    def csv_row(self) -> str:
        wall = "" if self.wall_time_s is None else f"{self.wall_time_s:.6f}"
        psnr = "" if self.psnr_db is None else f"{self.psnr_db:.4f}"
        return f"{self.mode},{self.n},{self.h},{self.w},{self.layers},{wall},{self.peak_alloc_bytes},{psnr}"


def write_csv(records, path) -> None:
    """Write records under the fixed golden header."""
    lines = [CSV_HEADER] + [record.csv_row() for record in records]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# inputs and weights
# ---------------------------------------------------------------------------


def make_features(input_spec, channels: int, seed: int):
    """Build (features, h, w) from a synthetic size or an image.

    ``input_spec`` is either an (h, w) pair — seeded standard-normal
    features — or an (h, w, 3) uint8 image, projected to ``channels``
    through a seeded random map.
    """
    rng = np.random.default_rng(seed)
    spec = np.asarray(input_spec)
    if spec.ndim == 3 and spec.shape[2] == 3:
        h, w = int(spec.shape[0]), int(spec.shape[1])
        rgb = (spec.astype(np.float32) / np.float32(255.0)).reshape(h * w, 3)
        proj = rng.standard_normal((3, channels)).astype(np.float32)
        return matmul(rgb, proj), h, w
    if spec.shape == (2,):
        h, w = int(spec[0]), int(spec[1])
        if min(h, w) < 1:
            raise ShapeError(f"feature grid must be positive, got {h}x{w}")
        return rng.standard_normal((h * w, channels)).astype(np.float32), h, w
    raise ShapeError(
        "input must be an (h, w) pair or an (h, w, 3) uint8 image, "
        f"got shape {spec.shape}"
    )


@dataclass
class BenchWeights:
    """Seeded weights shared by all modes: one query/key projection pair and
    centroids for the plan, plus per-layer value/output projections."""

    w_q: np.ndarray
    w_k: np.ndarray
    centroids: np.ndarray
    per_layer: list[tuple[np.ndarray, np.ndarray]]

    def nla_layer(self, index: int) -> NlaWeights:
        w_v, w_o = self.per_layer[index]
        return NlaWeights(w_q=self.w_q, w_k=self.w_k, w_v=w_v, w_o=w_o)


def make_bench_weights(cfg: NetConfig, seed: int) -> BenchWeights:
    rng = np.random.default_rng(seed + 1)  # distinct stream from the features
    c, ch = cfg.channels, cfg.c_hat

    def uniform(shape, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape).astype(np.float32)

    w_q = uniform((c, ch), c)
    w_k = uniform((c, ch), c)
    centroids = l2_normalize_rows(rng.standard_normal((cfg.clusters, ch)).astype(np.float32))
    per_layer = [(uniform((c, ch), c), uniform((ch, c), ch)) for _ in range(cfg.num_fau)]
    return BenchWeights(w_q=w_q, w_k=w_k, centroids=centroids, per_layer=per_layer)


def _plan_state(cfg: NetConfig, weights: BenchWeights) -> SphericalKMeans:
    state = SphericalKMeans(n_clusters=cfg.clusters, decay=cfg.decay)
    state.cluster_centers_ = weights.centroids
    state.assignment_counts_ = np.zeros(cfg.clusters, dtype=np.int64)
    return state


# ---------------------------------------------------------------------------
# pipelines (public-op compositions with explicit buffer accounting)
# ---------------------------------------------------------------------------


def _dense_layer(x, weights: NlaWeights, tracker: AllocationTracker):
    """One dense layer, arithmetic-identical to nla_forward(x, weights)."""
    q, k, v = project_qkv(x, weights)
    tracker.add(q, k, v)
    scores = matmul(q, k.T)
    tracker.add(scores)
    probs = row_softmax(scores)
    tracker.add(probs)
    tracker.drop(scores)
    del scores  # n x n buffer; release physically, not just in the accounting
    attended = matmul(probs, v)
    tracker.add(attended)
    tracker.drop(probs)
    del probs
    y = x + linear_map(attended, weights.w_o)
    tracker.add(y)
    tracker.drop(attended, q, k, v)
    return y


def _coa_step(x, w_m, w_out, shared, plan, tracker, parallel):
    """One collaborative step, arithmetic-identical to coa_forward with
    beta = 1 on the same shared weights."""
    mixed = linear_map(x, w_m)
    tracker.add(mixed)
    attended = sparse_attention_apply(shared, plan, mixed, parallel=parallel)
    tracker.add(attended)
    tracker.drop(mixed)
    y = x + np.float32(1.0) * linear_map(attended, w_out)
    tracker.add(y)
    tracker.drop(attended)
    return y


def run_pipeline(
    mode: str,
    features: np.ndarray,
    cfg: NetConfig,
    weights: BenchWeights,
    tracker: AllocationTracker | None = None,
    parallel: bool = False,
) -> np.ndarray:
    """Run one forward pass of a pipeline over flattened features (n, c)."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    tracker = tracker if tracker is not None else AllocationTracker()
    x = np.ascontiguousarray(features, dtype=np.float32)
    tracker.add(x)

    if mode == "nla":
        for i in range(cfg.num_fau):
            previous = x
            x = _dense_layer(x, weights.nla_layer(i), tracker)
            tracker.drop(previous)
        return x

    state = _plan_state(cfg, weights)

    if mode == "lsp":
        for i in range(cfg.num_fau):
            layer = weights.nla_layer(i)
            q, k, v = project_qkv(x, layer)
            tracker.add(q, k, v)
            labels = state.predict(q)
            plan = build_plan(labels, cfg.window_size)
            tracker.add(plan)
            shared = sparse_attention_weights(q, k, plan, parallel=parallel)
            tracker.add(shared)
            tracker.drop(q, k)
            attended = sparse_attention_apply(shared, plan, v, parallel=parallel)
            tracker.add(attended)
            tracker.drop(v, shared, plan)
            y = x + linear_map(attended, layer.w_o)
            tracker.add(y)
            tracker.drop(attended, x)
            x = y
        return x

    # lcoa: one plan and one shared weight tensor for the whole stack
    q = linear_map(x, weights.w_q)
    tracker.add(q)
    k = linear_map(x, weights.w_k)
    tracker.add(k)
    labels = state.predict(q)
    plan = build_plan(labels, cfg.window_size)
    tracker.add(plan)
    shared = sparse_attention_weights(q, k, plan, parallel=parallel)
    tracker.add(shared)
    tracker.drop(q, k)
    for w_v, w_o in weights.per_layer:
        previous = x
        x = _coa_step(x, w_v, w_o, shared, plan, tracker, parallel)
        tracker.drop(previous)
    tracker.drop(shared, plan)
    return x


# ---------------------------------------------------------------------------
# runner
# ---------------------------------------------------------------------------


def run_benchmark(
    cfg: NetConfig,
    mode,
    input_spec,
    repeats: int = 3,
    seed: int = 0,
    parallel: bool = False,
    psnr_reference: bool = False,
) -> list[BenchRecord]:
    """Benchmark one or more modes on the same features and weights.

    Returns one record per requested mode.  With ``psnr_reference`` the
    dense pipeline output is computed once outside any timed region and
    sparse modes report their PSNR against it (the dense mode itself is the
    reference, so its quality cell stays empty).
    """
    if repeats < 1:
        raise ValueError(f"repeats must be positive, got {repeats}")
    modes = [mode] if isinstance(mode, str) else list(mode)
    for name in modes:
        if name not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {name!r}")

    features, h, w = make_features(input_spec, cfg.channels, seed)
    n = h * w
    weights = make_bench_weights(cfg, seed)

    reference = None
    if psnr_reference and any(name != "nla" for name in modes):
        reference = run_pipeline("nla", features, cfg, weights)

    records = []
    for name in modes:
        records.append(
            _run_mode(name, features, cfg, weights, repeats, parallel, reference, h, w, n)
        )
    return records


def _run_mode(mode, features, cfg, weights, repeats, parallel, reference, h, w, n):
    try:
        output = None
        tracker = AllocationTracker()
        plan_builds_before = op_counters.plan_builds
        run_pipeline(mode, features, cfg, weights, tracker, parallel)  # warmup
        plan_builds = op_counters.plan_builds - plan_builds_before

        times = []
        for _ in range(repeats):
            tracker = AllocationTracker()
            start = time.perf_counter()
            output = run_pipeline(mode, features, cfg, weights, tracker, parallel)
            times.append(time.perf_counter() - start)
    except MemoryError:
        return BenchRecord(
            mode=mode,
            n=n,
            h=h,
            w=w,
            layers=cfg.num_fau,
            wall_time_s=None,
            peak_alloc_bytes=tracker.peak_bytes,
        )

    psnr = None
    if reference is not None and mode != "nla":
        psnr = feature_psnr(output, reference)
    return BenchRecord(
        mode=mode,
        n=n,
        h=h,
        w=w,
        layers=cfg.num_fau,
        wall_time_s=float(statistics.median(times)),
        peak_alloc_bytes=tracker.peak_bytes,
        psnr_db=psnr,
        plan_builds=plan_builds,
    )
