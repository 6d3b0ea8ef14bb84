"""Super-resolution network: convolution/shuffle primitives, weight bundles,
forward-pass composition, and end-to-end determinism."""

from pathlib import Path

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError
from threadpoolctl import threadpool_limits

from lcoa.network import (
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
from lcoa.validation import NonFiniteError, ShapeError
from lcoa.weights_io import load_weights, save_weights

DATA_DIR = Path(__file__).parent / "data"

TINY = NetConfig(
    scale=2, num_fau=2, channels=8, projected_channels=4, clusters=4, window_size=16
)


def tiny_cfg(**overrides) -> NetConfig:
    base = dict(
        scale=2, num_fau=2, channels=8, projected_channels=4, clusters=4, window_size=16
    )
    base.update(overrides)
    return NetConfig(**base)


def naive_conv3x3(x, kernel):
    """Loop reference: zero padding 1, float64 accumulation."""
    h, w, c_in = x.shape
    c_out = kernel.shape[3]
    xp = np.zeros((h + 2, w + 2, c_in), dtype=np.float64)
    xp[1 : h + 1, 1 : w + 1] = x.astype(np.float64)
    k = kernel.astype(np.float64)
    out = np.zeros((h, w, c_out), dtype=np.float64)
    for y in range(h):
        for xx in range(w):
            for ky in range(3):
                for kx in range(3):
                    out[y, xx] += xp[y + ky, xx + kx] @ k[ky, kx]
    return out


# ---------------------------------------------------------------------------
# conv2d_3x3
# ---------------------------------------------------------------------------


def test_conv_matches_loop_reference():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((6, 5, 3)).astype(np.float32)
    kernel = rng.standard_normal((3, 3, 3, 4)).astype(np.float32)
    got = conv2d_3x3(x, kernel)
    want = naive_conv3x3(x, kernel)
    assert got.shape == (6, 5, 4)
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-6)


def test_conv_identity_kernel_is_bit_exact():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((7, 9, 5)).astype(np.float32)
    kernel = np.zeros((3, 3, 5, 5), dtype=np.float32)
    kernel[1, 1] = np.eye(5, dtype=np.float32)
    assert np.array_equal(conv2d_3x3(x, kernel), x)


def test_conv_zero_padding_at_border():
    # All-ones 1x1 input, all-ones kernel: only the center tap sees data.
    x = np.ones((1, 1, 1), dtype=np.float32)
    kernel = np.ones((3, 3, 1, 1), dtype=np.float32)
    assert conv2d_3x3(x, kernel)[0, 0, 0] == 1.0


def test_conv_rejects_mismatched_channels():
    x = np.zeros((4, 4, 3), dtype=np.float32)
    kernel = np.zeros((3, 3, 5, 2), dtype=np.float32)
    with pytest.raises(ShapeError):
        conv2d_3x3(x, kernel)
    with pytest.raises(ShapeError):
        conv2d_3x3(x, np.zeros((5, 5, 3, 2), dtype=np.float32))


# ---------------------------------------------------------------------------
# pixel_shuffle
# ---------------------------------------------------------------------------


def test_pixel_shuffle_frozen_layout():
    # One pixel, channels [0, 1, 2, 3], r=2: channel ch*4 + dy*2 + dx lands
    # at output pixel (dy, dx).
    x = np.arange(4, dtype=np.float32).reshape(1, 1, 4)
    out = pixel_shuffle(x, 2)
    assert out.shape == (2, 2, 1)
    assert np.array_equal(out[:, :, 0], np.array([[0, 1], [2, 3]], dtype=np.float32))


def test_pixel_shuffle_multichannel_layout():
    # Two output channels, r=2: input channel ch*4 + dy*2 + dx.
    x = np.arange(8, dtype=np.float32).reshape(1, 1, 8)
    out = pixel_shuffle(x, 2)
    assert out.shape == (2, 2, 2)
    assert np.array_equal(out[:, :, 0], np.array([[0, 1], [2, 3]], dtype=np.float32))
    assert np.array_equal(out[:, :, 1], np.array([[4, 5], [6, 7]], dtype=np.float32))


def test_pixel_shuffle_r3_and_inverse_relation():
    rng = np.random.default_rng(13)
    x = rng.standard_normal((4, 5, 18)).astype(np.float32)
    out = pixel_shuffle(x, 3)
    assert out.shape == (12, 15, 2)
    for ch in range(2):
        for dy in range(3):
            for dx in range(3):
                np.testing.assert_array_equal(
                    out[dy::3, dx::3, ch], x[:, :, ch * 9 + dy * 3 + dx]
                )


def test_pixel_shuffle_rejects_bad_channel_count():
    with pytest.raises(ShapeError):
        pixel_shuffle(np.zeros((2, 2, 6), dtype=np.float32), 2)


# ---------------------------------------------------------------------------
# bundles: inventory, synthesis, validation
# ---------------------------------------------------------------------------


def test_inventory_shapes_default_config():
    cfg = NetConfig()
    inv = dict(tensor_inventory(cfg))
    assert inv["head.kernel"] == (3, 3, 3, 128)
    assert inv["lsp.w_q"] == (128, 128)
    assert inv["lsp.centroids"] == (128, 128)
    assert inv["fau00.conv1.kernel"] == (3, 3, 128, 128)
    assert inv["fau09.attn.w_out"] == (128, 128)
    assert inv["fau09.attn.beta"] == ()
    assert inv["tail.kernel"] == (3, 3, 128, 12)
    assert "up.kernel" not in inv


def test_inventory_scale_variants():
    inv3 = dict(tensor_inventory(tiny_cfg(scale=3)))
    assert inv3["tail.kernel"] == (3, 3, 8, 27)
    inv4 = dict(tensor_inventory(tiny_cfg(scale=4)))
    assert inv4["up.kernel"] == (3, 3, 8, 32)
    assert inv4["tail.kernel"] == (3, 3, 8, 12)


def test_synthesized_bundle_validates_and_is_seeded():
    w1 = synthesize_weights(TINY, seed=3)
    w2 = synthesize_weights(TINY, seed=3)
    w3 = synthesize_weights(TINY, seed=4)
    validate_weights(w1, TINY)
    for name in w1.names():
        assert np.array_equal(w1[name], w2[name])
    assert any(not np.array_equal(w1[n], w3[n]) for n in w1.names() if n != "config")


def test_synthesized_centroids_are_unit_rows():
    w = synthesize_weights(TINY, seed=0)
    norms = np.linalg.norm(w["lsp.centroids"].astype(np.float64), axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-6)


def test_synthesized_beta_is_one():
    w = synthesize_weights(TINY, seed=0)
    assert float(w["fau00.attn.beta"]) == 1.0
    assert w["fau00.attn.beta"].shape == ()


def test_config_round_trips_through_bundle():
    cfg = tiny_cfg(scale=4, decay=0.75)
    w = synthesize_weights(cfg, seed=1)
    back = config_from_weights(w)
    assert back == cfg


def test_validate_names_missing_and_unexpected_tensors():
    w = synthesize_weights(TINY, seed=0)
    del w.tensors["fau01.attn.w_m"]
    with pytest.raises(ShapeError, match="fau01.attn.w_m"):
        validate_weights(w, TINY)
    w = synthesize_weights(TINY, seed=0)
    w["rogue"] = np.zeros(3, dtype=np.float32)
    with pytest.raises(ShapeError, match="rogue"):
        validate_weights(w, TINY)
    w = synthesize_weights(TINY, seed=0)
    w["head.kernel"] = np.zeros((3, 3, 3, 4), dtype=np.float32)
    with pytest.raises(ShapeError, match="head.kernel"):
        validate_weights(w, TINY)


def test_bundle_survives_disk_round_trip(tmp_path):
    w = synthesize_weights(TINY, seed=9)
    path = tmp_path / "tiny.lcoa"
    save_weights(path, w)
    loaded = load_weights(path)
    assert config_from_weights(loaded) == TINY
    for name in w.names():
        assert np.array_equal(w[name], loaded[name])


def test_shared_attention_needs_fewer_parameters():
    cfg = NetConfig()  # defaults: 10 units, 128 channels
    shared = synthesize_weights(cfg, seed=0).param_count()
    per_layer = nla_variant_weights(cfg, seed=0).param_count()
    assert shared < per_layer


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def seeded_image(h, w, seed=21):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


def as_float(image):
    return (image.astype(np.float32) / np.float32(255.0)).astype(np.float32)


@pytest.mark.parametrize("scale", [2, 3, 4])
def test_forward_output_shape_and_finiteness(scale):
    cfg = tiny_cfg(scale=scale)
    w = synthesize_weights(cfg, seed=2)
    lr = as_float(seeded_image(12, 10))
    out = lcoan_forward(lr, w, cfg)
    assert out.shape == (12 * scale, 10 * scale, 3)
    assert out.dtype == np.float32
    assert np.all(np.isfinite(out))


def test_forward_is_deterministic_across_calls():
    cfg = TINY
    w = synthesize_weights(cfg, seed=5)
    lr = as_float(seeded_image(10, 10))
    a = lcoan_forward(lr, w, cfg)
    b = lcoan_forward(lr, w, cfg)
    assert np.array_equal(a, b)


def test_forward_rejects_bad_inputs():
    cfg = TINY
    w = synthesize_weights(cfg, seed=5)
    with pytest.raises(ShapeError):
        lcoan_forward(np.zeros((8, 8, 4), dtype=np.float32), w, cfg)
    bad = np.zeros((8, 8, 3), dtype=np.float32)
    bad[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError, match="input"):
        lcoan_forward(bad, w, cfg)
    with pytest.raises(ValueError):
        lcoan_forward(np.zeros((8, 8, 3), dtype=np.float32), w, cfg, mode="train")


def test_zero_beta_reduces_to_conv_path_bit_exactly():
    """With every mixing coefficient at zero the network equals the pure
    convolutional pipeline computed here from the same kernels."""
    cfg = TINY
    w = synthesize_weights(cfg, seed=7)
    for i in range(cfg.num_fau):
        w[f"fau{i:02d}.attn.beta"] = np.float32(0.0)
    lr = as_float(seeded_image(9, 11))

    x = conv2d_3x3(lr, w["head.kernel"])
    for i in range(cfg.num_fau):
        t = conv2d_3x3(x, w[f"fau{i:02d}.conv1.kernel"])
        t = np.maximum(t, 0.0)
        x = x + conv2d_3x3(t, w[f"fau{i:02d}.conv2.kernel"])
    want = pixel_shuffle(conv2d_3x3(x, w["tail.kernel"]), 2)

    got = lcoan_forward(lr, w, cfg)
    assert np.array_equal(got, want)


def test_calibrate_updates_centroids_and_changes_output():
    cfg = TINY
    w = synthesize_weights(cfg, seed=8)
    before = w["lsp.centroids"].copy()
    lr = as_float(seeded_image(10, 12))
    lcoan_forward(lr, w, cfg, mode="calibrate")
    after = w["lsp.centroids"]
    assert not np.array_equal(before, after)
    norms = np.linalg.norm(after.astype(np.float64), axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-6)


def test_infer_mode_leaves_bundle_untouched():
    cfg = TINY
    w = synthesize_weights(cfg, seed=8)
    snapshot = {n: w[n].copy() for n in w.names()}
    lcoan_forward(as_float(seeded_image(10, 12)), w, cfg)
    for name, tensor in snapshot.items():
        assert np.array_equal(w[name], tensor)


def test_forward_reads_config_from_bundle_when_cfg_omitted():
    cfg = tiny_cfg(scale=3)
    w = synthesize_weights(cfg, seed=4)
    out = lcoan_forward(as_float(seeded_image(8, 8)), w)
    assert out.shape == (24, 24, 3)


def test_parallel_forward_is_bit_identical():
    cfg = TINY
    w = synthesize_weights(cfg, seed=6)
    lr = as_float(seeded_image(10, 10))
    assert np.array_equal(
        lcoan_forward(lr, w, cfg, parallel=False), lcoan_forward(lr, w, cfg, parallel=True)
    )


def test_forward_golden_output_and_thread_independence():
    """End-to-end output is bit-stable across runs and BLAS thread counts;
    the committed golden file pins it across library versions too."""
    cfg = TINY
    w = synthesize_weights(cfg, seed=0)
    lr = as_float(seeded_image(24, 24, seed=33))
    with threadpool_limits(limits=1):
        single = lcoan_forward(lr, w, cfg)
    with threadpool_limits(limits=2):
        double = lcoan_forward(lr, w, cfg)
    assert np.array_equal(single, double)
    golden = np.load(DATA_DIR / "golden_sr_24x24_x2.npy")
    assert np.array_equal(single, golden)


# ---------------------------------------------------------------------------
# estimator front end
# ---------------------------------------------------------------------------


def make_resolver(**overrides):
    params = dict(
        scale=2,
        num_fau=2,
        channels=8,
        projected_channels=4,
        clusters=4,
        window_size=16,
        random_state=0,
    )
    params.update(overrides)
    return CollaborativeSuperResolver(**params)


def test_resolver_fit_predict_shapes():
    model = make_resolver().fit()
    out = model.predict(seeded_image(12, 10))
    assert out.shape == (24, 20, 3)
    assert out.dtype == np.uint8


def test_resolver_requires_fit_before_predict():
    with pytest.raises(NotFittedError):
        make_resolver().predict(seeded_image(8, 8))


def test_resolver_fit_returns_self_and_calibrates():
    model = make_resolver()
    model.fit()
    before = model.weights_["lsp.centroids"].copy()
    assert model.fit(seeded_image(10, 10)) is model
    assert not np.array_equal(model.weights_["lsp.centroids"], before)


def test_resolver_fit_accepts_image_lists():
    model = make_resolver().fit([seeded_image(8, 8, seed=1), seeded_image(8, 8, seed=2)])
    outs = model.predict([seeded_image(8, 8, seed=3), seeded_image(8, 8, seed=4)])
    assert len(outs) == 2
    assert all(o.shape == (16, 16, 3) for o in outs)


def test_resolver_get_params_round_trip():
    model = make_resolver(scale=3, window_size=32)
    clone = CollaborativeSuperResolver(**model.get_params())
    assert clone.get_params() == model.get_params()


def test_resolver_accepts_external_weights():
    cfg = TINY
    model = make_resolver()
    model.weights_ = synthesize_weights(cfg, seed=0)
    out = model.predict(seeded_image(8, 8))
    assert out.shape == (16, 16, 3)


def test_config_validation():
    with pytest.raises(ShapeError):
        NetConfig(scale=5)
    with pytest.raises(ShapeError):
        NetConfig(num_fau=0)
    with pytest.raises(ShapeError):
        NetConfig(decay=1.5)
