"""PNG reading and writing for render outputs.

Color and alpha images live in float [0, 1] everywhere inside the
package and are quantized only at the file boundary: 8-bit for color
and alpha, 16-bit grayscale for integer label images.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, ParameterError


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """Map float [0, 1] to uint8 by rounding; the only quantization step."""
    img = np.asarray(img, dtype=np.float64)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_color_png(img: np.ndarray, path: str | Path) -> None:
    """(H, W, 3) float [0, 1] to an 8-bit RGB PNG."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ParameterError("color images must have shape (H, W, 3)")
    Image.fromarray(quantize_u8(img), mode="RGB").save(path)


def write_gray_png(img: np.ndarray, path: str | Path) -> None:
    """(H, W) float [0, 1] to an 8-bit grayscale PNG (e.g. alpha maps)."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ParameterError("grayscale images must have shape (H, W)")
    Image.fromarray(quantize_u8(img), mode="L").save(path)


def write_label_png(labels: np.ndarray, path: str | Path) -> None:
    """(H, W) non-negative integers to a 16-bit grayscale PNG."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ParameterError("label images must have shape (H, W)")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > np.iinfo(np.uint16).max:
        raise ParameterError("labels must fit in uint16")
    Image.fromarray(labels.astype(np.uint16)).save(path)


def read_image(path: str | Path) -> np.ndarray:
    """Load a PNG back to float [0, 1]; (H, W) for grayscale, (H, W, 3) for RGB.

    16-bit grayscale files (label images) come back as integer arrays
    instead, unscaled.
    """
    path = Path(path)
    with Image.open(path) as im:
        if im.mode in ("I;16", "I"):
            return np.asarray(im, dtype=np.int64)
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64) / 255.0
        if im.mode == "RGB":
            return np.asarray(im, dtype=np.float64) / 255.0
        if im.mode == "RGBA":
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        raise FormatError(f"{path}: unsupported image mode {im.mode!r}")
