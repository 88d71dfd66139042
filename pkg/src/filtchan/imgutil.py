"""Image I/O and resampling helpers.

Images are numpy float32 arrays, shape (H, W, 3) or (H, W), values in [0, 1].
8-bit PNG and PPM files are read and written through Pillow. Resampling is
bilinear with half-pixel-centre alignment (destination pixel (r, c) samples
the source at ((r + 0.5) * sh / dh - 0.5, (c + 0.5) * sw / dw - 0.5)).
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image as PILImage


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load an 8-bit image file as float32 RGB in [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write a [0, 1] float image as 8-bit PNG/PPM (format from extension)."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    data = np.rint(arr * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path)


def image_size(path: str | os.PathLike) -> tuple[int, int]:
    """(height, width) from the file header, without decoding pixel data."""
    with PILImage.open(path) as im:
        w, h = im.size
    return h, w


def _source_coords(n_dst: int, n_src: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres; integer part + fraction, clamped to valid texels
    x = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    x0 = np.floor(x).astype(np.int64)
    frac = x - x0
    x0 = np.clip(x0, 0, n_src - 1)
    x1 = np.clip(x0 + 1, 0, n_src - 1)
    return x0, x1, frac.astype(np.float32)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an (H, W) or (H, W, C) float image."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"invalid output size {out_h}x{out_w}")
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[:2]
    y0, y1, fy = _source_coords(out_h, h)
    x0, x1, fx = _source_coords(out_w, w)
    if img.ndim == 2:
        a = img[np.ix_(y0, x0)]
        b = img[np.ix_(y0, x1)]
        c = img[np.ix_(y1, x0)]
        d = img[np.ix_(y1, x1)]
        fy = fy[:, None]
        fx = fx[None, :]
    else:
        a = img[np.ix_(y0, x0)]
        b = img[np.ix_(y0, x1)]
        c = img[np.ix_(y1, x0)]
        d = img[np.ix_(y1, x1)]
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return (top + (bot - top) * fy).astype(np.float32)


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    # mirror reflection without edge repetition: ... 2 1 0 1 2 ... n-1 n-2 ...
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def sample_window(img: np.ndarray, x: float, y: float, w: float, h: float,
                  out_h: int, out_w: int) -> np.ndarray:
    """Bilinearly resample the source rectangle (x, y, w, h) to (out_h, out_w).

    Source coordinates outside the image are mirror-reflected, which is what
    allows positive windows to extend moderately past the image border.
    """
    img = np.asarray(img, dtype=np.float32)
    sh, sw = img.shape[:2]
    ys = y + (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    xs = x + (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = (ys - y0).astype(np.float32)
    fx = (xs - x0).astype(np.float32)
    ry0 = _reflect_index(y0, sh)
    ry1 = _reflect_index(y0 + 1, sh)
    rx0 = _reflect_index(x0, sw)
    rx1 = _reflect_index(x0 + 1, sw)
    if img.ndim == 2:
        a = img[np.ix_(ry0, rx0)]
        b = img[np.ix_(ry0, rx1)]
        c = img[np.ix_(ry1, rx0)]
        d = img[np.ix_(ry1, rx1)]
        fy = fy[:, None]
        fx = fx[None, :]
    else:
        a = img[np.ix_(ry0, rx0)]
        b = img[np.ix_(ry0, rx1)]
        c = img[np.ix_(ry1, rx0)]
        d = img[np.ix_(ry1, rx1)]
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    top = a + (b - a) * fx
    bot = c + (d - c) * fx
    return (top + (bot - top) * fy).astype(np.float32)
