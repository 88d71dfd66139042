"""HOG+LUV feature channels.

An input image is transformed into a stack of 10 per-pixel feature planes:

====  =============================================================
 0-2  CIE L*u*v* colour planes, each rescaled to [0, 1] (see below)
 3    gradient magnitude
 4-9  oriented gradient magnitude, 6 bins over [0, 180.) degrees
====  =============================================================

The oriented bins use soft linear assignment, so planes 4-9 sum per pixel to
plane 3. No clamping, cell normalisation or block normalisation is applied to
the gradient planes.

LUV conventions (fixed forever; changing them invalidates trained models):

* input RGB in [0, 1] is treated as *linear* RGB with Rec. 709 primaries and
  D65 white point (no gamma companding is applied);
* XYZ via the standard matrix, then CIE 1976 L*u*v*;
* affine rescaling to [0, 1]:
  ``L01 = L* / 100``, ``U01 = (u* + 90) / 270``, ``V01 = (v* + 140) / 250``.
  These offsets/ranges cover the full linear-RGB cube gamut.

Gradients use the centred-difference stencil [-1, 0, 1] with replicated
borders. For colour inputs, each pixel takes the gradient of the plane whose
gradient magnitude is largest at that pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_CHANNELS = 10
N_ORIENT_BINS = 6

# Linear RGB (Rec. 709 primaries) -> XYZ, D65 white point.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=np.float64,
)
_WHITE_X, _WHITE_Y, _WHITE_Z = (float(s) for s in _RGB_TO_XYZ.sum(axis=1))
_CIE_EPS = (6.0 / 29.0) ** 3
_CIE_KAPPA = (29.0 / 3.0) ** 3
_UN_PRIME = 4.0 * _WHITE_X / (_WHITE_X + 15.0 * _WHITE_Y + 3.0 * _WHITE_Z)
_VN_PRIME = 9.0 * _WHITE_Y / (_WHITE_X + 15.0 * _WHITE_Y + 3.0 * _WHITE_Z)

# [0, 1] rescaling of (L*, u*, v*); documented in the module docstring.
LUV_L_RANGE = 100.0
LUV_U_OFFSET, LUV_U_RANGE = 90.0, 270.0
LUV_V_OFFSET, LUV_V_RANGE = 140.0, 250.0


@dataclass(frozen=True)
class ChannelOptions:
    """Options for :func:`compute_channels`.

    pre_smooth: "off" or "triangle1" (radius-1 triangle filter [1,2,1]/4,
    applied separably to the image before any channel is computed).
    """

    pre_smooth: str = "off"

    def __post_init__(self):
        if self.pre_smooth not in ("off", "triangle1"):
            raise ValueError(f"pre_smooth must be 'off' or 'triangle1', got {self.pre_smooth!r}")


def _check_finite(img: np.ndarray) -> None:
    if not np.isfinite(img).all():
        raise ValueError("input image contains non-finite pixel values")


def rgb_to_luv(img: np.ndarray) -> np.ndarray:
    """Convert an (H, W, 3) RGB image in [0, 1] to rescaled LUV planes.

    Returns an (H, W, 3) float32 array with each plane in [0, 1] under the
    conventions documented in the module docstring.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB image, got shape {img.shape}")
    _check_finite(img)

    xyz = img @ _RGB_TO_XYZ.T
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]

    yr = y / _WHITE_Y
    lstar = np.where(yr > _CIE_EPS, 116.0 * np.cbrt(yr) - 16.0, _CIE_KAPPA * yr)

    denom = x + 15.0 * y + 3.0 * z
    # black pixels: denom == 0; u', v' default to the white point so u* = v* = 0
    safe = denom > 0
    up = np.where(safe, 4.0 * x / np.where(safe, denom, 1.0), _UN_PRIME)
    vp = np.where(safe, 9.0 * y / np.where(safe, denom, 1.0), _VN_PRIME)
    ustar = 13.0 * lstar * (up - _UN_PRIME)
    vstar = 13.0 * lstar * (vp - _VN_PRIME)

    out = np.empty(img.shape, dtype=np.float32)
    out[..., 0] = lstar / LUV_L_RANGE
    out[..., 1] = (ustar + LUV_U_OFFSET) / LUV_U_RANGE
    out[..., 2] = (vstar + LUV_V_OFFSET) / LUV_V_RANGE
    return out


def _centered_diffs(plane: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # [-1, 0, 1] stencil, replicated borders
    padded = np.pad(plane, 1, mode="edge")
    dx = padded[1:-1, 2:] - padded[1:-1, :-2]
    dy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    return dx, dy


def gradient_channels(img: np.ndarray) -> np.ndarray:
    """Gradient magnitude plus 6 soft-binned orientation planes.

    Accepts (H, W) or (H, W, C); multi-plane inputs are reduced per pixel to
    the gradient of the plane with the largest magnitude. Returns a
    (7, H, W) float32 array: magnitude first, then bins at k*30 degrees.
    """
    img = np.asarray(img, dtype=np.float32)
    _check_finite(img)
    if img.ndim == 2:
        dx, dy = _centered_diffs(img)
        mag = np.sqrt(dx * dx + dy * dy)
    elif img.ndim == 3:
        dxs = np.empty(img.shape[2:] + img.shape[:2], dtype=np.float32)
        dys = np.empty_like(dxs)
        for c in range(img.shape[2]):
            dxs[c], dys[c] = _centered_diffs(img[..., c])
        mags = np.sqrt(dxs * dxs + dys * dys)
        winner = np.argmax(mags, axis=0)
        rows, cols = np.indices(winner.shape)
        dx = dxs[winner, rows, cols]
        dy = dys[winner, rows, cols]
        mag = mags[winner, rows, cols]
    else:
        raise ValueError(f"expected (H, W) or (H, W, C) image, got shape {img.shape}")

    theta = np.mod(np.arctan2(dy, dx), np.pi)  # gradient orientation in [0, pi)
    t = theta * (N_ORIENT_BINS / np.pi)
    lo = np.floor(t)
    frac = (t - lo).astype(np.float32)
    lo = lo.astype(np.int64) % N_ORIENT_BINS
    hi = (lo + 1) % N_ORIENT_BINS

    out = np.zeros((1 + N_ORIENT_BINS,) + mag.shape, dtype=np.float32)
    out[0] = mag
    w_lo = mag * (1.0 - frac)
    w_hi = mag * frac
    zero = np.float32(0.0)
    for k in range(N_ORIENT_BINS):
        out[1 + k] = np.where(lo == k, w_lo, zero) + np.where(hi == k, w_hi, zero)
    return out


def smooth_triangle(img: np.ndarray) -> np.ndarray:
    """Separable radius-1 triangle filter [1, 2, 1]/4, replicated borders."""
    img = np.asarray(img, dtype=np.float32)
    planes = img[..., None] if img.ndim == 2 else img
    padded = np.pad(planes, ((1, 1), (1, 1), (0, 0)), mode="edge")
    horiz = (padded[:, :-2] + 2.0 * padded[:, 1:-1] + padded[:, 2:]) * 0.25
    smooth = (horiz[:-2] + 2.0 * horiz[1:-1] + horiz[2:]) * 0.25
    return smooth[..., 0] if img.ndim == 2 else smooth


def compute_channels(img: np.ndarray, opts: ChannelOptions = ChannelOptions()) -> np.ndarray:
    """Full 10-plane channel stack of an image, shape (10, H, W) float32.

    Plane order: L, U, V, gradient magnitude, 6 orientation bins. Grayscale
    inputs are replicated to three planes for the colour conversion.
    """
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        img = np.stack([img] * 3, axis=-1)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected RGB or grayscale image, got shape {img.shape}")
    if img.shape[0] < 3 or img.shape[1] < 3:
        raise ValueError(f"degenerate image {img.shape[0]}x{img.shape[1]}: both dims must be >= 3 px")
    _check_finite(img)

    if opts.pre_smooth == "triangle1":
        img = smooth_triangle(img)

    luv = rgb_to_luv(img)
    grads = gradient_channels(img)
    stack = np.empty((N_CHANNELS,) + img.shape[:2], dtype=np.float32)
    stack[0] = luv[..., 0]
    stack[1] = luv[..., 1]
    stack[2] = luv[..., 2]
    stack[3:] = grads
    return stack
