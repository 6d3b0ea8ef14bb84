"""Command-line interface: ``selftest``, ``bench``, ``sr``, ``init-weights``.

``selftest`` runs a fast suite of library invariants and exits 0/1.
``bench`` times one attention pipeline and appends rows to a CSV file under
the fixed schema.  ``sr`` upscales a binary PPM with a weight bundle, and
``init-weights`` synthesizes a seeded bundle so ``sr`` can run without a
trained checkpoint.
"""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import benchmark as bench_mod
from . import tensor_ops
from .benchmark import run_benchmark, write_csv
from .clustering import SphericalKMeans, assign_clusters, ema_centroid_update
from .collaborative import CoaLayer, coa_forward
from .dense_attention import NlaWeights, attention_vjp, nla_forward, project_qkv
from .image_io import PpmError, read_ppm, write_ppm
from .metrics import PSNR_CAP_DB, psnr_y
from .network import (
    NetConfig,
    config_from_weights,
    lcoan_forward,
    pixel_shuffle,
    synthesize_weights,
)
from .sparse_plan import build_plan, sparse_attention_apply, sparse_attention_weights
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
from .weights_io import WeightsIOError, load_weights, save_weights

# ---------------------------------------------------------------------------
# selftest checks
# ---------------------------------------------------------------------------


def _check_matmul_hand_value():
    a = np.array([[1, 2], [3, 4]], dtype=np.float32)
    b = np.array([[5], [6]], dtype=np.float32)
    assert np.array_equal(matmul(a, b), np.array([[17], [39]], dtype=np.float32))


def _check_blocked_accumulation_invariance():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((70, 40)).astype(np.float32)
    b = rng.standard_normal((40, 30)).astype(np.float32)
    full = matmul(a, b)
    saved = tensor_ops._BLOCK_BYTES
    try:
        tensor_ops._BLOCK_BYTES = 1024  # force many small row blocks
        blocked = matmul(a, b)
    finally:
        tensor_ops._BLOCK_BYTES = saved
    assert np.array_equal(full, blocked)


def _check_softmax_rows():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((50, 17)).astype(np.float32)
    p = row_softmax(a)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-6)
    shifted = row_softmax(a + np.float32(3.0))
    assert np.max(np.abs(p - shifted)) <= 1e-6


def _check_softmax_uniform_rows():
    p = row_softmax(np.full((4, 8), 2.5, dtype=np.float32))
    assert np.all(p == np.float32(1.0 / 8.0))


def _check_normalization_idempotent():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((40, 9)).astype(np.float32)
    once = l2_normalize_rows(a)
    twice = l2_normalize_rows(once)
    assert np.max(np.abs(once - twice)) <= 1e-6


def _check_gather_scatter_round_trip():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((31, 5)).astype(np.float32)
    perm = rng.permutation(31)
    assert np.array_equal(scatter_rows(gather_rows(a, perm), perm), a)


def _check_dense_attention_oracle():
    rng = np.random.default_rng(4)
    n, c_hat = 48, 8
    q = rng.standard_normal((n, c_hat)).astype(np.float32)
    k = rng.standard_normal((n, c_hat)).astype(np.float32)
    v = rng.standard_normal((n, c_hat)).astype(np.float32)
    got = matmul(row_softmax(matmul(q, k.T)), v)
    qd, kd, vd = q.astype(np.float64), k.astype(np.float64), v.astype(np.float64)
    for i in range(n):
        logits = kd @ qd[i]
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        assert np.max(np.abs(got[i] - weights @ vd)) <= 1e-6


def _check_degenerate_sparse_equals_dense():
    rng = np.random.default_rng(5)
    n, c_hat = 40, 6
    q = rng.standard_normal((n, c_hat)).astype(np.float32)
    k = rng.standard_normal((n, c_hat)).astype(np.float32)
    v = rng.standard_normal((n, c_hat)).astype(np.float32)
    plan = build_plan(np.zeros(n, dtype=np.int64), n)  # one cluster, full window
    shared = sparse_attention_weights(q, k, plan)
    sparse = sparse_attention_apply(shared, plan, v)
    dense = matmul(row_softmax(matmul(q, k.T)), v)
    assert np.max(np.abs(sparse - dense)) <= 1e-5


def _check_sphere_distance_identity():
    rng = np.random.default_rng(6)
    q = l2_normalize_rows(rng.standard_normal((200, 7)).astype(np.float32)).astype(np.float64)
    k = l2_normalize_rows(rng.standard_normal((200, 7)).astype(np.float32)).astype(np.float64)
    lhs = np.sum((q - k) ** 2, axis=1)
    rhs = 2.0 - 2.0 * np.sum(q * k, axis=1)
    assert np.max(np.abs(lhs - rhs)) <= 1e-6


def _check_same_cluster_bound():
    rng = np.random.default_rng(7)
    q = rng.standard_normal((300, 6)).astype(np.float32)
    k = rng.standard_normal((300, 6)).astype(np.float32)
    state = SphericalKMeans(n_clusters=5, random_state=0).fit(q, keys=k)
    qn, kn = l2_normalize_rows(q), l2_normalize_rows(k)
    labels_q, labels_k = state.predict(q), state.predict(k)
    eps = max(state.max_member_distance(q), state.max_member_distance(k))
    bound = 1.0 - 2.0 * eps * eps
    sims = matmul(qn, kn.T).astype(np.float64)
    same = labels_q[:, None] == labels_k[None, :]
    assert np.all(sims[same] > bound)


def _check_ema_closed_form():
    centroids = np.array([[1.0, 0.0]], dtype=np.float32)
    queries = np.array([[0.0, 1.0]], dtype=np.float32)
    labels = np.array([0], dtype=np.int64)
    raw = ema_centroid_update(centroids, queries, None, labels, None, decay=0.999)
    expected = np.array([[0.999, 0.0005]], dtype=np.float64)
    assert np.max(np.abs(raw.astype(np.float64) - expected)) <= 1e-7


def _check_empty_cluster_preservation():
    rng = np.random.default_rng(8)
    q = rng.standard_normal((30, 4)).astype(np.float32)
    state = SphericalKMeans(n_clusters=8, random_state=1).fit(q)
    before = state.cluster_centers_.copy()
    far = l2_normalize_rows(np.tile(before[0], (6, 1)))
    state.partial_fit(far)
    assigned = np.unique(assign_clusters(l2_normalize_rows(far), before))
    untouched = np.setdiff1d(np.arange(8), assigned)
    assert untouched.size > 0
    assert np.array_equal(state.cluster_centers_[untouched], before[untouched])


def _check_plan_permutation():
    labels = np.array([2, 0, 2, 1, 0, 1, 1], dtype=np.int64)
    plan = build_plan(labels, 3)
    assert np.array_equal(np.sort(plan.perm), np.arange(7))
    sorted_labels = labels[plan.perm]
    assert np.all(np.diff(sorted_labels) >= 0)
    assert plan.pad_count == 2 and plan.num_windows == 3


def _check_zero_beta_identity():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((30, 6)).astype(np.float32)
    w_m = rng.standard_normal((6, 4)).astype(np.float32)
    w_out = rng.standard_normal((4, 6)).astype(np.float32)
    plan = build_plan(np.zeros(30, dtype=np.int64), 8)
    q = rng.standard_normal((30, 4)).astype(np.float32)
    shared = sparse_attention_weights(q, q, plan)
    layer = CoaLayer(w_m=w_m, w_out=w_out, beta=0.0)
    assert np.array_equal(coa_forward(x, layer, shared, plan), x)


def _check_collaborative_sharing():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((25, 6)).astype(np.float32)
    q = rng.standard_normal((25, 4)).astype(np.float32)
    op_counters.reset()
    plan = build_plan(np.zeros(25, dtype=np.int64), 8)
    shared = sparse_attention_weights(q, q, plan)
    layer = CoaLayer(
        w_m=rng.standard_normal((6, 4)).astype(np.float32),
        w_out=rng.standard_normal((4, 6)).astype(np.float32),
    )
    for _ in range(4):
        x = coa_forward(x, layer, shared, plan)
    assert op_counters.plan_builds == 1


def _check_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    n, c_hat = 6, 3
    q = rng.standard_normal((n, c_hat)).astype(np.float32)
    k = rng.standard_normal((n, c_hat)).astype(np.float32)
    v = rng.standard_normal((n, c_hat)).astype(np.float32)
    d_out = rng.standard_normal((n, c_hat)).astype(np.float32)

    def loss(qq, kk, vv):
        out = matmul(row_softmax(matmul(qq, kk.T)), vv)
        return float(np.sum(out.astype(np.float64) * d_out.astype(np.float64)))

    d_q, d_k, d_v = attention_vjp(q, k, v, d_out)
    step = np.float32(1e-3)
    for _ in range(10):
        which = rng.integers(0, 3)
        target, grad = ((q, d_q), (k, d_k), (v, d_v))[which]
        i, j = rng.integers(0, n), rng.integers(0, c_hat)
        plus, minus = target.copy(), target.copy()
        plus[i, j] += step
        minus[i, j] -= step
        args_plus = [plus if t is target else t for t in (q, k, v)]
        args_minus = [minus if t is target else t for t in (q, k, v)]
        fd = (loss(*args_plus) - loss(*args_minus)) / (2.0 * float(step))
        analytic = float(grad[i, j])
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-3)
        assert rel <= 1e-3


def _check_weight_round_trip():
    from .weights_io import ModelWeights

    w = ModelWeights()
    rng = np.random.default_rng(12)
    w["a"] = rng.standard_normal((3, 4)).astype(np.float32)
    w["b"] = np.float32(2.5)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "w.lcoa"
        save_weights(path, w)
        back = load_weights(path)
    assert back.names() == ["a", "b"]
    assert np.array_equal(back["a"], w["a"]) and float(back["b"]) == 2.5


def _check_ppm_round_trip():
    rng = np.random.default_rng(13)
    image = rng.integers(0, 256, size=(9, 7, 3), dtype=np.uint8)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "img.ppm"
        write_ppm(image, path)
        back = read_ppm(path)
    assert np.array_equal(back, image)


def _check_psnr_values():
    image = np.full((8, 8, 3), 128, dtype=np.uint8)
    shifted = np.full((8, 8, 3), 129, dtype=np.uint8)
    assert psnr_y(image, image) == PSNR_CAP_DB
    assert abs(psnr_y(image, shifted) - 48.1308036086791) <= 1e-9


def _check_pixel_shuffle_layout():
    x = np.arange(4, dtype=np.float32).reshape(1, 1, 4)
    out = pixel_shuffle(x, 2)
    assert np.array_equal(out[:, :, 0], np.array([[0, 1], [2, 3]], dtype=np.float32))


SELFTEST_CHECKS = [
    ("matrix product matches a hand-computed value", _check_matmul_hand_value),
    ("blocked accumulation is invariant to block size", _check_blocked_accumulation_invariance),
    ("softmax rows sum to one and are shift-invariant", _check_softmax_rows),
    ("equal logits give exactly uniform rows", _check_softmax_uniform_rows),
    ("row normalization is idempotent", _check_normalization_idempotent),
    ("gather/scatter round trip is bit-exact", _check_gather_scatter_round_trip),
    ("dense attention matches a per-query summation loop", _check_dense_attention_oracle),
    ("single-cluster full-window sparse equals dense", _check_degenerate_sparse_equals_dense),
    ("squared-distance identity holds on the unit sphere", _check_sphere_distance_identity),
    ("same-cluster similarity bound has zero violations", _check_same_cluster_bound),
    ("centroid EMA matches the closed form", _check_ema_closed_form),
    ("empty clusters keep their centroids bit-exactly", _check_empty_cluster_preservation),
    ("plan permutation is a stable complete sort", _check_plan_permutation),
    ("zero mixing coefficient is a bit-exact identity", _check_zero_beta_identity),
    ("a collaborative stack builds exactly one plan", _check_collaborative_sharing),
    ("analytic gradients match finite differences", _check_gradients_match_finite_differences),
    ("weight bundles round-trip bit-exactly", _check_weight_round_trip),
    ("PPM images round-trip bit-exactly", _check_ppm_round_trip),
    ("luma PSNR cap and closed-form value", _check_psnr_values),
    ("pixel shuffle follows the documented layout", _check_pixel_shuffle_layout),
]


def run_selftest(out=None) -> int:
    """Run every invariant check, print one PASS/FAIL line each, return 0/1."""
    out = out if out is not None else sys.stdout
    failures = 0
    for name, check in SELFTEST_CHECKS:
        try:
            check()
        except Exception as exc:  # noqa: BLE001 - a failing check must not stop the suite
            failures += 1
            print(f"[selftest] FAIL — {name}: {exc!r}", file=out)
        else:
            print(f"[selftest] PASS — {name}", file=out)
    total = len(SELFTEST_CHECKS)
    print(f"[selftest] {total - failures}/{total} checks passed", file=out)
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_selftest(args) -> int:
    return run_selftest()


def _cmd_bench(args) -> int:
    cfg = NetConfig(
        scale=2,  # irrelevant to flattened-feature pipelines
        num_fau=args.layers,
        channels=args.channels,
        projected_channels=args.projected_channels,
        clusters=args.clusters,
        window_size=args.window,
    )
    if args.input is not None:
        input_spec = read_ppm(args.input)
    else:
        input_spec = (args.height, args.width)
    records = run_benchmark(
        cfg,
        args.mode,
        input_spec,
        repeats=args.repeats,
        seed=args.seed,
        parallel=args.parallel,
        psnr_reference=args.psnr_reference,
    )
    write_csv(records, args.out)
    for record in records:
        if record.failed:
            print(f"{record.mode}: n={record.n} failed (out of memory)")
        else:
            quality = "" if record.psnr_db is None else f" psnr {record.psnr_db:.2f} dB"
            print(
                f"{record.mode}: n={record.n} layers={record.layers} "
                f"median {record.wall_time_s:.4f} s "
                f"peak {record.peak_alloc_bytes} bytes{quality}"
            )
    print(f"wrote {args.out}")
    return 0


def _cmd_sr(args) -> int:
    weights = load_weights(args.weights)
    cfg = config_from_weights(weights)
    if cfg.scale != args.scale:
        print(
            f"error: weight bundle was built for scale {cfg.scale}, "
            f"requested scale {args.scale}",
            file=sys.stderr,
        )
        return 1
    image = read_ppm(args.input)
    lr = (image.astype(np.float32) / np.float32(255.0)).astype(np.float32)
    out = lcoan_forward(lr, weights, cfg, mode="calibrate" if args.calibrate else "infer")
    if args.calibrate:
        save_weights(args.weights, weights)
    result = np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8)
    write_ppm(result, args.out)
    h, w = result.shape[:2]
    suffix = " (centroids recalibrated and saved)" if args.calibrate else ""
    print(f"wrote {args.out} ({w}x{h}){suffix}")
    return 0


def _cmd_init_weights(args) -> int:
    cfg = NetConfig(
        scale=args.scale,
        num_fau=args.num_fau,
        channels=args.channels,
        projected_channels=args.projected_channels,
        clusters=args.clusters,
        window_size=args.window,
        decay=args.decay,
    )
    weights = synthesize_weights(cfg, seed=args.seed)
    save_weights(args.out, weights)
    print(f"wrote {args.out} ({weights.param_count()} parameters, scale {cfg.scale})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcoa",
        description="Learnable collaborative attention: benchmarks, self-tests, "
        "and toy super-resolution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("selftest", help="run the library invariant suite")
    p.set_defaults(handler=_cmd_selftest)

    p = sub.add_parser("bench", help="time one attention pipeline and write CSV")
    p.add_argument("--mode", required=True, choices=("nla", "lsp", "lcoa"))
    p.add_argument("--height", type=int, default=64, help="feature grid height")
    p.add_argument("--width", type=int, default=64, help="feature grid width")
    p.add_argument("--input", default=None, help="PPM image to derive features from "
                   "(overrides --height/--width)")
    p.add_argument("--layers", type=int, default=10)
    p.add_argument("--clusters", type=int, default=128)
    p.add_argument("--window", type=int, default=384)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--channels", type=int, default=128)
    p.add_argument("--projected-channels", type=int, default=None)
    p.add_argument("--parallel", action="store_true",
                   help="per-window thread parallelism (outputs are identical)")
    p.add_argument("--psnr-reference", action="store_true",
                   help="also run the dense pipeline untimed and report sparse "
                   "modes' PSNR against it")
    p.set_defaults(handler=_cmd_bench)

    p = sub.add_parser("sr", help="upscale a PPM image with a weight bundle")
    p.add_argument("--input", required=True, help="input PPM (binary P6)")
    p.add_argument("--weights", required=True, help="weight bundle path")
    p.add_argument("--scale", type=int, required=True, choices=(2, 3, 4))
    p.add_argument("--out", required=True, help="output PPM path")
    p.add_argument("--calibrate", action="store_true",
                   help="run one centroid EMA round on this image and save the "
                   "updated bundle")
    p.set_defaults(handler=_cmd_sr)

    p = sub.add_parser("init-weights", help="synthesize a seeded weight bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=int, required=True, choices=(2, 3, 4))
    p.add_argument("--num-fau", type=int, default=10)
    p.add_argument("--channels", type=int, default=128)
    p.add_argument("--projected-channels", type=int, default=None)
    p.add_argument("--clusters", type=int, default=128)
    p.add_argument("--window", type=int, default=384)
    p.add_argument("--decay", type=float, default=0.999)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_init_weights)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (PpmError, WeightsIOError, ShapeError, NonFiniteError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
