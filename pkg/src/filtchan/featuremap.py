"""Applying a filter bank to channel stacks and addressing the responses.

A filter of (r, c) cells expands to an (r*cell_px, c*cell_px) pixel template
(each cell weight replicated over its block). Responses are valid-region
correlations of that template with a channel plane, sampled every
``eval_stride_px`` pixels. Integer-weight filters go through one integral
image per channel (one rectangle sum per nonzero cell); real-weight filters
use direct dot products over strided window views. Both routes agree to
floating-point accuracy, which the test suite checks explicitly.

A feature is addressed as (channel, filter, cell_x, cell_y) on the response
grid of a model window; placements whose pixel support would leave the window
are excluded, so large filters have fewer valid positions.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .channels import N_CHANNELS
from .filterbank import Filter, FilterBank


@dataclass(frozen=True)
class FeatureIndex:
    channel: int
    filter: int
    cell_x: int
    cell_y: int


def expand_filter(f: Filter, cell_px: int) -> np.ndarray:
    """Pixel-level template: each cell weight replicated cell_px x cell_px."""
    return np.kron(f.weights, np.ones((cell_px, cell_px), dtype=np.float64))


def _grid_shape(plane_hw: tuple[int, int], support_hw: tuple[int, int], stride: int) -> tuple[int, int]:
    h, w = plane_hw
    sh, sw = support_hw
    if h < sh or w < sw:
        return 0, 0
    return (h - sh) // stride + 1, (w - sw) // stride + 1


def _integral(batch: np.ndarray) -> np.ndarray:
    # zero-padded summed-area table; float64 keeps rectangle sums exact enough
    k, c, h, w = batch.shape
    ii = np.zeros((k, c, h + 1, w + 1), dtype=np.float64)
    np.cumsum(np.cumsum(batch, axis=2, dtype=np.float64), axis=3, out=ii[:, :, 1:, 1:])
    return ii


def _responses_integral(ii: np.ndarray, f: Filter, cell_px: int, stride: int) -> np.ndarray:
    """(K, C, gh, gw) responses of one filter from the integral images."""
    h, w = ii.shape[2] - 1, ii.shape[3] - 1
    sh, sw = f.rows * cell_px, f.cols * cell_px
    gh, gw = _grid_shape((h, w), (sh, sw), stride)
    out = np.zeros(ii.shape[:2] + (gh, gw), dtype=np.float64)
    if gh == 0 or gw == 0:
        return out

    def corners(dy, dx):
        return ii[:, :, dy:dy + (gh - 1) * stride + 1:stride, dx:dx + (gw - 1) * stride + 1:stride]

    for i in range(f.rows):
        for j in range(f.cols):
            wgt = f.weights[i, j]
            if wgt == 0.0:
                continue
            y0, y1 = i * cell_px, (i + 1) * cell_px
            x0, x1 = j * cell_px, (j + 1) * cell_px
            rect = corners(y1, x1) - corners(y0, x1) - corners(y1, x0) + corners(y0, x0)
            out += wgt * rect
    return out


def _responses_direct(batch: np.ndarray, f: Filter, cell_px: int, stride: int) -> np.ndarray:
    """(K, C, gh, gw) responses by explicit dot products (any weights)."""
    template = expand_filter(f, cell_px)
    sh, sw = template.shape
    gh, gw = _grid_shape(batch.shape[2:], (sh, sw), stride)
    if gh == 0 or gw == 0:
        return np.zeros(batch.shape[:2] + (0, 0), dtype=np.float64)
    view = np.lib.stride_tricks.sliding_window_view(batch, (sh, sw), axis=(2, 3))
    view = view[:, :, ::stride, ::stride][:, :, :gh, :gw]
    return np.einsum("kcghij,ij->kcgh", view, template, optimize=True)


def batch_responses(batch: np.ndarray, bank: FilterBank, method: str = "auto") -> list[np.ndarray]:
    """Per-filter responses of a (K, 10, H, W) stack batch.

    Returns one array per filter: (K, 10, gh, gw) for shared banks, or
    (K, gh, gw) for per-channel banks (the filter's designated channel only).
    ``method`` forces the integral-image or direct route ("integral",
    "direct"); "auto" picks per filter by weight type.
    """
    if method not in ("auto", "integral", "direct"):
        raise ValueError(f"unknown method {method!r}")
    batch = np.asarray(batch, dtype=np.float64)
    sh, sw = bank.max_support_px()
    if batch.shape[2] < sh or batch.shape[3] < sw:
        raise ValueError(
            f"stack {batch.shape[2]}x{batch.shape[3]} is smaller than the largest "
            f"filter support {sh}x{sw}"
        )
    ii = None
    out = []
    for f in bank.filters:
        use_integral = method == "integral" or (method == "auto" and f.is_integer)
        if use_integral:
            if ii is None:
                ii = _integral(batch)
            resp = _responses_integral(ii, f, bank.cell_px, bank.eval_stride_px)
        else:
            resp = _responses_direct(batch, f, bank.cell_px, bank.eval_stride_px)
        if bank.per_channel:
            resp = resp[:, f.channel]
        out.append(resp)
    return out


@dataclass
class ResponseStack:
    """All filter responses of one channel stack, read by (channel, filter) index."""

    bank: FilterBank
    planes: list[np.ndarray]  # per filter: (10, gh, gw), or (gh, gw) per-channel
    height: int
    width: int
    image_id: str = ""
    scale: float = 1.0

    @property
    def stride(self) -> int:
        return self.bank.eval_stride_px

    def plane(self, channel: int, filter_idx: int) -> np.ndarray:
        if not 0 <= filter_idx < len(self.planes):
            raise IndexError(f"filter index {filter_idx} out of range")
        f = self.bank.filters[filter_idx]
        if self.bank.per_channel:
            if channel != f.channel:
                raise IndexError(
                    f"filter {filter_idx} belongs to channel {f.channel}, not {channel}"
                )
            return self.planes[filter_idx]
        if not 0 <= channel < self.planes[filter_idx].shape[0]:
            raise IndexError(f"channel {channel} out of range")
        return self.planes[filter_idx][channel]

    def window_grid(self, window: tuple[int, int], step: int = 1) -> tuple[int, int]:
        """Number of (y, x) window origins on the response grid, at a grid step."""
        win_w, win_h = window
        s = self.stride * step
        if self.height < win_h or self.width < win_w:
            return 0, 0
        return (self.height - win_h) // s + 1, (self.width - win_w) // s + 1


def apply_bank(stack: np.ndarray, bank: FilterBank, method: str = "auto",
               image_id: str = "", scale: float = 1.0) -> ResponseStack:
    """Compute the response stack of one (10, H, W) channel stack."""
    stack = np.asarray(stack)
    if stack.ndim != 3:
        raise ValueError(f"expected (C, H, W) stack, got shape {stack.shape}")
    planes = [p[0] for p in batch_responses(stack[None], bank, method=method)]
    return ResponseStack(bank=bank, planes=planes, height=stack.shape[1],
                         width=stack.shape[2], image_id=image_id, scale=scale)


def read_feature(resp: ResponseStack, idx: FeatureIndex) -> float:
    """Single response lookup; raises IndexError on any out-of-range field."""
    plane = resp.plane(idx.channel, idx.filter)
    gh, gw = plane.shape
    if not (0 <= idx.cell_y < gh and 0 <= idx.cell_x < gw):
        raise IndexError(
            f"cell ({idx.cell_x}, {idx.cell_y}) outside response grid {gw}x{gh}"
        )
    return float(plane[idx.cell_y, idx.cell_x])


def _filter_grid(bank: FilterBank, f: Filter, window: tuple[int, int]) -> tuple[int, int]:
    win_w, win_h = window
    sh, sw = bank.support_px(f)
    return _grid_shape((win_h, win_w), (sh, sw), bank.eval_stride_px)


def feature_indices(bank: FilterBank, window: tuple[int, int]) -> list[FeatureIndex]:
    """All valid feature addresses for a model window, in canonical order.

    Shared banks iterate channel, then filter, then cell_y, cell_x;
    per-channel banks iterate filter (carrying its channel), then cells.
    This is exactly the column order of :func:`window_features`.
    """
    out: list[FeatureIndex] = []
    if bank.per_channel:
        for fi, f in enumerate(bank.filters):
            gh, gw = _filter_grid(bank, f, window)
            out.extend(FeatureIndex(f.channel, fi, cx, cy)
                       for cy in range(gh) for cx in range(gw))
        return out
    for channel in range(N_CHANNELS):
        for fi, f in enumerate(bank.filters):
            gh, gw = _filter_grid(bank, f, window)
            out.extend(FeatureIndex(channel, fi, cx, cy)
                       for cy in range(gh) for cx in range(gw))
    return out


def feature_count(bank: FilterBank, window: tuple[int, int]) -> int:
    """Number of valid feature addresses (border placements excluded)."""
    win_w, win_h = window
    if win_w % bank.eval_stride_px or win_h % bank.eval_stride_px:
        raise ValueError(
            f"window {win_w}x{win_h} not divisible by eval stride {bank.eval_stride_px}"
        )
    per_filter = [int(np.prod(_filter_grid(bank, f, window))) for f in bank.filters]
    if bank.per_channel:
        return sum(per_filter)
    return N_CHANNELS * sum(per_filter)


def window_features(stacks: np.ndarray, bank: FilterBank, method: str = "auto") -> np.ndarray:
    """Flat feature matrix (K, F) float32 for a batch of window-sized stacks.

    Column order matches :func:`feature_indices` for the window
    (width, height) = (stacks.shape[3], stacks.shape[2]).
    """
    stacks = np.asarray(stacks)
    if stacks.ndim != 4:
        raise ValueError(f"expected (K, C, H, W) batch, got shape {stacks.shape}")
    resps = batch_responses(stacks, bank, method=method)
    k = stacks.shape[0]
    if bank.per_channel:
        flat = np.concatenate([r.reshape(k, -1) for r in resps], axis=1)
    else:
        flat = np.concatenate([r.reshape(k, r.shape[1], -1) for r in resps], axis=2)
        flat = flat.reshape(k, -1)
    return flat.astype(np.float32)


def write_float_grid(arr: np.ndarray, path: str | os.PathLike, header_comments=()) -> None:
    """Debug dump of a 2-D real grid as portable text ('floatgrid v1')."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("float grid must be 2-D")
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        fh.write(f"floatgrid v1 {arr.shape[0]} {arr.shape[1]}\n")
        for row in arr:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_float_grid(path: str | os.PathLike) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    head = lines[0].split()
    if head[:2] != ["floatgrid", "v1"] or len(head) != 4:
        raise ValueError(f"{path}: not a floatgrid v1 file")
    rows, cols = int(head[2]), int(head[3])
    data = np.array([[float(v) for v in ln.split()] for ln in lines[1:1 + rows]])
    if data.shape != (rows, cols):
        raise ValueError(f"{path}: grid data does not match header dims")
    return data
