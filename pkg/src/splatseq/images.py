"""8-bit PNG I/O and small image utilities.

Images move through the toolkit as float64 HxWx3 arrays in [0, 1]; PNGs are
written by rounding to 8 bits, so quantize() reproduces exactly what a
save/load round-trip yields.
"""

import numpy as np
from PIL import Image


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap a float image onto the 8-bit grid (what a PNG round-trip returns)."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image), mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def luminance(image: np.ndarray) -> np.ndarray:
    # BT.601 weights
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Deterministic bilinear resample at output pixel centers."""
    src = np.asarray(image, dtype=np.float64)
    sh, sw = src.shape[:2]
    ys = (np.arange(height) + 0.5) * (sh / height) - 0.5
    xs = (np.arange(width) + 0.5) * (sw / width) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, sh - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, sw - 1)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)
    wx = np.clip(xs - x0, 0.0, 1.0)
    if src.ndim == 2:
        top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
        bot = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
        return top * (1 - wy)[:, None] + bot * wy[:, None]
    top = src[y0][:, x0] * (1 - wx)[None, :, None] + src[y0][:, x1] * wx[None, :, None]
    bot = src[y1][:, x0] * (1 - wx)[None, :, None] + src[y1][:, x1] * wx[None, :, None]
    return top * (1 - wy)[:, None, None] + bot * wy[:, None, None]
