"""Quality metrics: Y-channel PSNR for 8-bit images and a range-referenced
PSNR for float feature maps.

Zero-error comparisons return the cap value 100.0 dB rather than infinity,
so every result is representable in a CSV cell.
"""

from __future__ import annotations

import numpy as np

from .validation import ShapeError

PSNR_CAP_DB = 100.0


def luma(image) -> np.ndarray:
    """BT.601 luma plane (0.299 R + 0.587 G + 0.114 B) in float64,
    computed on the 8-bit domain."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"image must have shape (h, w, 3), got {image.shape}")
    r, g, b = (image[:, :, ch].astype(np.float64) for ch in range(3))
    return 0.299 * r + 0.587 * g + 0.114 * b


def psnr_y(a, b) -> float:
    """PSNR between two 8-bit images on their luma planes.

    10 * log10(255^2 / MSE_Y), capped at 100.0 dB; identical images hit the
    cap exactly.  Symmetric in its arguments.
    """
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = luma(a) - luma(b)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(255.0**2 / mse))


def feature_psnr(x, reference) -> float:
    """PSNR of a float feature map against a reference, with the reference's
    value range as the peak.  Capped at 100.0 dB; exact matches hit the cap."""
    x = np.asarray(x, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if x.shape != reference.shape:
        raise ShapeError(f"shapes differ: {x.shape} vs {reference.shape}")
    diff = x - reference
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    peak = float(reference.max() - reference.min())
    if peak == 0.0:
        return 0.0
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak**2 / mse))
