"""Forward-only super-resolution network built on collaborative attention.

Pipeline: a 3x3 head conv lifts the RGB input to ``channels`` features; the
shared sparse attention map is computed once from those shallow features;
each feature aggregation unit then runs conv -> rectifier -> conv ->
residual add -> collaborative attention, all reusing that one map; a tail
conv emits ``3 * s**2`` channels which one sub-pixel shuffle turns into the
RGB output (scale 4 runs an extra c -> 4c conv + x2 shuffle stage first).

The pixel shuffle layout is fixed: input channel ``ch * r * r + dy * r + dx``
of pixel (y, x) becomes output channel ``ch`` of pixel (y*r + dy, x*r + dx).

All weights live in a :class:`~lcoa.weights_io.ModelWeights` bundle whose
tensor names are listed by :func:`tensor_inventory`; a bundle also carries a
"config" metadata tensor so a file is self-describing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .clustering import SphericalKMeans
from .collaborative import CoaLayer, coa_forward
from .sparse_plan import lsp_forward
from .tensor_ops import l2_normalize_rows, matmul
from .validation import ShapeError, check_feature_map, check_finite
from .weights_io import ModelWeights


@dataclass
class NetConfig:
    """Architecture hyperparameters of the toy network."""

    scale: int = 2
    num_fau: int = 10
    channels: int = 128
    projected_channels: int | None = None
    clusters: int = 128
    window_size: int = 384
    decay: float = 0.999

    def __post_init__(self) -> None:
        if self.scale not in (2, 3, 4):
            raise ShapeError(f"scale must be 2, 3, or 4, got {self.scale}")
        for name in ("num_fau", "channels", "clusters", "window_size"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be positive, got {getattr(self, name)}")
        if self.projected_channels is not None and self.projected_channels < 1:
            raise ShapeError("projected_channels must be positive when given")
        if not 0.0 <= self.decay <= 1.0:
            raise ShapeError(f"decay must lie in [0, 1], got {self.decay}")
        # Decay lives in the bundle's float32 "config" tensor; holding it at
        # float32 precision here keeps bundle round trips exact.
        self.decay = float(np.float32(self.decay))

    @property
    def c_hat(self) -> int:
        return self.channels if self.projected_channels is None else self.projected_channels

    @property
    def tail_scale(self) -> int:
        """Per-stage shuffle factor of the tail conv (2, except 3 for x3)."""
        return 3 if self.scale == 3 else 2


def conv2d_3x3(x, kernel) -> np.ndarray:
    """3x3 convolution with zero padding 1 and stride 1.

    ``kernel`` has shape (3, 3, c_in, c_out); the output keeps the spatial
    size.  Internally an im2col matrix product with float64 accumulation.
    """
    x = check_feature_map(x, "x")
    kernel = np.ascontiguousarray(kernel, dtype=np.float32)
    if kernel.ndim != 4 or kernel.shape[:2] != (3, 3):
        raise ShapeError(f"kernel must have shape (3, 3, c_in, c_out), got {kernel.shape}")
    h, w, c_in = x.shape
    if kernel.shape[2] != c_in:
        raise ShapeError(
            f"kernel expects {kernel.shape[2]} input channels, feature map has {c_in}"
        )
    padded = np.zeros((h + 2, w + 2, c_in), dtype=np.float32)
    padded[1 : h + 1, 1 : w + 1] = x
    cols = [padded[ky : ky + h, kx : kx + w, :] for ky in range(3) for kx in range(3)]
    patches = np.concatenate(cols, axis=2).reshape(h * w, 9 * c_in)
    out = matmul(patches, kernel.reshape(9 * c_in, kernel.shape[3]))
    return out.reshape(h, w, kernel.shape[3])


def pixel_shuffle(x, r: int) -> np.ndarray:
    """Rearrange (h, w, c*r*r) to (h*r, w*r, c) with the documented layout."""
    x = check_feature_map(x, "x")
    if r < 1:
        raise ShapeError(f"shuffle factor must be positive, got {r}")
    h, w, c_full = x.shape
    if c_full % (r * r) != 0:
        raise ShapeError(f"channel count {c_full} is not divisible by r^2 = {r * r}")
    c = c_full // (r * r)
    t = x.reshape(h, w, c, r, r)
    return np.ascontiguousarray(t.transpose(0, 3, 1, 4, 2).reshape(h * r, w * r, c))


_CONFIG_FIELDS = 7


def _config_vector(cfg: NetConfig) -> np.ndarray:
    return np.array(
        [
            cfg.scale,
            cfg.num_fau,
            cfg.channels,
            cfg.c_hat,
            cfg.clusters,
            cfg.window_size,
            cfg.decay,
        ],
        dtype=np.float32,
    )


def config_from_weights(weights: ModelWeights) -> NetConfig:
    """Reconstruct the architecture from a bundle's "config" tensor."""
    if "config" not in weights:
        raise ShapeError("bundle has no 'config' tensor; pass a NetConfig explicitly")
    vec = weights["config"]
    if vec.shape != (_CONFIG_FIELDS,):
        raise ShapeError(f"'config' tensor must have shape ({_CONFIG_FIELDS},), got {vec.shape}")
    return NetConfig(
        scale=int(vec[0]),
        num_fau=int(vec[1]),
        channels=int(vec[2]),
        projected_channels=int(vec[3]),
        clusters=int(vec[4]),
        window_size=int(vec[5]),
        decay=float(vec[6]),
    )


def tensor_inventory(cfg: NetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) list for a bundle of this architecture."""
    c, ch = cfg.channels, cfg.c_hat
    items: list[tuple[str, tuple[int, ...]]] = [
        ("config", (_CONFIG_FIELDS,)),
        ("head.kernel", (3, 3, 3, c)),
        ("lsp.w_q", (c, ch)),
        ("lsp.w_k", (c, ch)),
        ("lsp.centroids", (cfg.clusters, ch)),
    ]
    for i in range(cfg.num_fau):
        items.append((f"fau{i:02d}.conv1.kernel", (3, 3, c, c)))
        items.append((f"fau{i:02d}.conv2.kernel", (3, 3, c, c)))
        items.append((f"fau{i:02d}.attn.w_m", (c, ch)))
        items.append((f"fau{i:02d}.attn.w_out", (ch, c)))
        items.append((f"fau{i:02d}.attn.beta", ()))
    if cfg.scale == 4:
        items.append(("up.kernel", (3, 3, c, 4 * c)))
    items.append(("tail.kernel", (3, 3, c, 3 * cfg.tail_scale**2)))
    return items


def validate_weights(weights: ModelWeights, cfg: NetConfig) -> None:
    """Check a bundle against an architecture; errors name the tensor."""
    expected = dict(tensor_inventory(cfg))
    for name, shape in expected.items():
        if name not in weights:
            raise ShapeError(f"weight bundle is missing tensor '{name}'")
        if weights[name].shape != shape:
            raise ShapeError(
                f"tensor '{name}' has shape {weights[name].shape}, expected {shape}"
            )
    for name in weights.names():
        if name not in expected:
            raise ShapeError(f"weight bundle has unexpected tensor '{name}'")
    if not np.array_equal(weights["config"], _config_vector(cfg)):
        raise ShapeError("tensor 'config' disagrees with the requested architecture")


def _uniform(rng, shape, fan_in):
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape).astype(np.float32)


def synthesize_weights(cfg: NetConfig, seed: int = 0) -> ModelWeights:
    """Deterministic seeded bundle so the network runs without training.

    Kernels and projections draw uniform [-s, s] with s = 1/sqrt(fan-in)
    (fan-in = 9 * c_in for convs, input channels for projections), betas
    start at 1.0, and centroids are random unit vectors.  Tensors are drawn
    in inventory order, which keeps bundles bit-stable for a given seed.
    """
    rng = np.random.default_rng(seed)
    weights = ModelWeights()
    for name, shape in tensor_inventory(cfg):
        if name == "config":
            weights[name] = _config_vector(cfg)
        elif name.endswith(".beta"):
            weights[name] = np.float32(1.0)
        elif name == "lsp.centroids":
            raw = rng.standard_normal(shape).astype(np.float32)
            weights[name] = l2_normalize_rows(raw)
        elif name.endswith("kernel"):
            weights[name] = _uniform(rng, shape, 9 * shape[2])
        else:
            weights[name] = _uniform(rng, shape, shape[0])
    return weights


def nla_variant_weights(cfg: NetConfig, seed: int = 0) -> ModelWeights:
    """Same backbone with full per-layer dense attention weights.

    Each aggregation unit carries its own query/key/value/output projections
    and there is no shared plan state; used for parameter-count comparisons.
    """
    rng = np.random.default_rng(seed)
    c, ch = cfg.channels, cfg.c_hat
    weights = ModelWeights()
    weights["head.kernel"] = _uniform(rng, (3, 3, 3, c), 27)
    for i in range(cfg.num_fau):
        weights[f"fau{i:02d}.conv1.kernel"] = _uniform(rng, (3, 3, c, c), 9 * c)
        weights[f"fau{i:02d}.conv2.kernel"] = _uniform(rng, (3, 3, c, c), 9 * c)
        for proj in ("w_q", "w_k", "w_v"):
            weights[f"fau{i:02d}.attn.{proj}"] = _uniform(rng, (c, ch), c)
        weights[f"fau{i:02d}.attn.w_o"] = _uniform(rng, (ch, c), ch)
    if cfg.scale == 4:
        weights["up.kernel"] = _uniform(rng, (3, 3, c, 4 * c), 9 * c)
    weights["tail.kernel"] = _uniform(rng, (3, 3, c, 3 * cfg.tail_scale**2), 9 * c)
    return weights


def _state_from_weights(weights: ModelWeights, cfg: NetConfig) -> SphericalKMeans:
    state = SphericalKMeans(n_clusters=cfg.clusters, decay=cfg.decay)
    state.cluster_centers_ = weights["lsp.centroids"]
    state.assignment_counts_ = np.zeros(cfg.clusters, dtype=np.int64)
    return state


def _fau_conv_block(x, k1, k2) -> np.ndarray:
    t = conv2d_3x3(x, k1)
    np.maximum(t, 0.0, out=t)
    t = conv2d_3x3(t, k2)
    return x + t


def lcoan_forward(
    lr,
    weights: ModelWeights,
    cfg: NetConfig | None = None,
    mode: str = "infer",
    parallel: bool = False,
) -> np.ndarray:
    """Upscale an (h, w, 3) float map to (h*scale, w*scale, 3).

    ``mode="calibrate"`` additionally runs one centroid EMA round on the
    shallow features and writes the updated centroids back into ``weights``
    (the bundle's single-writer contract).  The attention plan and shared
    weights are built exactly once per call, from the head conv output.
    """
    if mode not in ("infer", "calibrate"):
        raise ValueError(f"mode must be 'infer' or 'calibrate', got {mode!r}")
    if cfg is None:
        cfg = config_from_weights(weights)
    validate_weights(weights, cfg)
    lr = check_feature_map(lr, "lr", channels=3)
    check_finite(lr, "input")

    x = conv2d_3x3(lr, weights["head.kernel"])
    h, w, c = x.shape
    state = _state_from_weights(weights, cfg)
    shared, plan, state = lsp_forward(
        x.reshape(h * w, c),
        weights["lsp.w_q"],
        weights["lsp.w_k"],
        state,
        cfg.window_size,
        update_state=(mode == "calibrate"),
        parallel=parallel,
    )
    if mode == "calibrate":
        weights["lsp.centroids"] = state.cluster_centers_

    for i in range(cfg.num_fau):
        x = _fau_conv_block(
            x, weights[f"fau{i:02d}.conv1.kernel"], weights[f"fau{i:02d}.conv2.kernel"]
        )
        layer = CoaLayer(
            w_m=weights[f"fau{i:02d}.attn.w_m"],
            w_out=weights[f"fau{i:02d}.attn.w_out"],
            beta=float(weights[f"fau{i:02d}.attn.beta"]),
        )
        x = coa_forward(x.reshape(h * w, c), layer, shared, plan, parallel=parallel).reshape(
            h, w, c
        )

    if cfg.scale == 4:
        x = pixel_shuffle(conv2d_3x3(x, weights["up.kernel"]), 2)
    x = pixel_shuffle(conv2d_3x3(x, weights["tail.kernel"]), cfg.tail_scale)
    check_finite(x, "output")
    return x


class CollaborativeSuperResolver(BaseEstimator):
    """sklearn-style front end: ``fit`` calibrates centroids, ``predict`` upscales.

    Parameters mirror :class:`NetConfig` plus a ``random_state`` used to
    synthesize weights when none are supplied.  ``fit`` accepts a single
    (h, w, 3) uint8 image or a list of them (or None to just synthesize
    weights); ``predict`` maps uint8 images to upscaled uint8 images.

    Attributes
    ----------
    weights_ : ModelWeights
        The active bundle; may also be assigned directly (for example from
        :func:`lcoa.weights_io.load_weights`).
    """

    def __init__(
        self,
        scale: int = 2,
        num_fau: int = 10,
        channels: int = 128,
        projected_channels=None,
        clusters: int = 128,
        window_size: int = 384,
        decay: float = 0.999,
        random_state: int = 0,
    ):
        self.scale = scale
        self.num_fau = num_fau
        self.channels = channels
        self.projected_channels = projected_channels
        self.clusters = clusters
        self.window_size = window_size
        self.decay = decay
        self.random_state = random_state

    def config(self) -> NetConfig:
        return NetConfig(
            scale=self.scale,
            num_fau=self.num_fau,
            channels=self.channels,
            projected_channels=self.projected_channels,
            clusters=self.clusters,
            window_size=self.window_size,
            decay=self.decay,
        )

    @staticmethod
    def _to_float(image) -> np.ndarray:
        image = np.asarray(image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ShapeError(f"expected an (h, w, 3) image, got shape {image.shape}")
        return (image.astype(np.float32) / np.float32(255.0)).astype(np.float32)

    @staticmethod
    def _to_uint8(x) -> np.ndarray:
        return np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)

    def fit(self, X=None, y=None):
        """Synthesize weights if needed, then calibrate on the given images."""
        if not hasattr(self, "weights_"):
            self.weights_ = synthesize_weights(self.config(), seed=self.random_state)
        if X is None:
            images = []
        elif isinstance(X, np.ndarray) and X.ndim == 3:
            images = [X]
        else:
            images = list(X)
        for image in images:
            lcoan_forward(self._to_float(image), self.weights_, self.config(), mode="calibrate")
        return self

    def predict(self, X) -> np.ndarray:
        """Upscale one uint8 image (or a list of them)."""
        if not hasattr(self, "weights_"):
            raise NotFittedError(
                "CollaborativeSuperResolver has no weights; call fit() or assign weights_"
            )
        if isinstance(X, np.ndarray) and X.ndim == 3:
            out = lcoan_forward(self._to_float(X), self.weights_, self.config())
            return self._to_uint8(out)
        return [self.predict(image) for image in X]
