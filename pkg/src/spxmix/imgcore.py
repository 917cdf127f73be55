"""Raster primitives: color conversion, morphological kernels, PNG I/O.

Pixel data travels as plain numpy arrays:

* image, 8-bit: ``uint8`` array of shape ``(H, W, 3)`` (RGB) or ``(H, W)`` (gray)
* image, float: ``float32`` array, same shapes
* label map: ``uint8`` array of shape ``(H, W)``; ``IGNORE_LABEL`` marks
  pixels excluded from every score
* probability map: ``float32`` array of shape ``(H, W, K)``; each pixel's
  K-vector is non-negative and sums to 1 within 1e-5
"""

from __future__ import annotations

import numpy as np
from PIL import Image

IGNORE_LABEL = 255

# sRGB -> XYZ under D65, IEC 61966-2-1
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=np.float64,
)
_D65_WHITE = np.array([0.95047, 1.0, 1.08883], dtype=np.float64)


def require_rgb_u8(img: np.ndarray, name: str = "image") -> None:
    """Raise ValueError unless ``img`` is an (H, W, 3) uint8 array."""
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name}: expected (H, W, 3) array, got shape "
                         f"{getattr(img, 'shape', None)}")
    if img.dtype != np.uint8:
        raise ValueError(f"{name}: expected uint8 samples, got {img.dtype}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name}: empty image {img.shape}")


def validate_probmap(probs: np.ndarray, name: str = "probs") -> None:
    """Check the probability-map contract: (H, W, K), >= 0, rows sum to 1."""
    if probs.ndim != 3:
        raise ValueError(f"{name}: expected (H, W, K), got shape {probs.shape}")
    if np.any(probs < 0):
        raise ValueError(f"{name}: negative probabilities")
    sums = probs.sum(axis=-1, dtype=np.float64)
    if np.any(np.abs(sums - 1.0) > 1e-5):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(f"{name}: pixel vectors must sum to 1 (off by {worst:g})")


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """Convert an 8-bit RGB image to CIE L*a*b* (sRGB companding, D65 white).

    Returns a float32 (H, W, 3) array with L in [0, 100]. Gray inputs map
    to a* = b* = 0 up to rounding.
    """
    require_rgb_u8(img)
    srgb = img.astype(np.float64) / 255.0

    linear = np.where(
        srgb <= 0.04045,
        srgb / 12.92,
        ((srgb + 0.055) / 1.055) ** 2.4,
    )
    xyz = linear @ _SRGB_TO_XYZ.T
    t = xyz / _D65_WHITE

    eps = (6.0 / 29.0) ** 3
    f = np.where(t > eps, np.cbrt(t), t / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)

    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    lab = np.stack(
        [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)],
        axis=-1,
    )
    return lab.astype(np.float32)


def _window3x3(channel: np.ndarray) -> np.ndarray:
    """Stack the nine 3x3-shifted views of ``channel`` (edge replication)."""
    padded = np.pad(channel, 1, mode="edge")
    h, w = channel.shape
    return np.stack(
        [padded[dr:dr + h, dc:dc + w] for dr in range(3) for dc in range(3)],
        axis=0,
    )


def morphological_gradient(channel: np.ndarray) -> np.ndarray:
    """Dilation minus erosion under a 3x3 square structuring element.

    Border pixels are handled by edge replication, so a constant image
    yields an all-zero gradient. Output is float32 and >= 0 everywhere.
    """
    if channel.ndim != 2:
        raise ValueError(f"expected single-channel (H, W), got {channel.shape}")
    stack = _window3x3(channel.astype(np.float32))
    return (stack.max(axis=0) - stack.min(axis=0)).astype(np.float32)


def gradient_for_watershed(img: np.ndarray) -> np.ndarray:
    """Mean of the per-channel morphological gradients of the Lab image."""
    lab = rgb_to_lab(img)
    grads = [morphological_gradient(lab[..., c]) for c in range(3)]
    return (sum(grads) / 3.0).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG I/O


def load_image_u8(path) -> np.ndarray:
    """Read an 8-bit PNG as (H, W, 3) RGB or (H, W) grayscale uint8."""
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image_u8(img: np.ndarray, path) -> None:
    """Write a uint8 array ((H, W) gray or (H, W, 3) RGB) as PNG."""
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8, got {img.dtype}")
    if img.ndim not in (2, 3):
        raise ValueError(f"expected (H, W) or (H, W, 3), got {img.shape}")
    Image.fromarray(img).save(path, format="PNG")


def load_label_map(path) -> np.ndarray:
    """Read a label map stored as single-channel 8-bit PNG (ignore = 255)."""
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: label map must be single-channel 8-bit, "
                             f"got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8)


def save_label_map(labels: np.ndarray, path) -> None:
    if labels.ndim != 2 or labels.dtype != np.uint8:
        raise ValueError("label map must be a (H, W) uint8 array")
    Image.fromarray(labels, mode="L").save(path, format="PNG")
