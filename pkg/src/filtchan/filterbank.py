"""Filter banks: generated families, PCA-learned banks, text persistence.

A filter is a small matrix of cell weights; a cell covers ``cell_px`` square
pixels when the filter is applied to a channel plane. Generated families use
weights in {-1, 0, +1}; PCA banks use real weights on a 1-px cell grid and are
evaluated every 2 pixels instead of every 6.

Families
--------
uniform         one all-ones 1x1-cell filter (plain box pooling)
squares         uniform squares with sides 1..n cells
checkerboards   uniform squares + two-band gradients + alternating patterns,
                enumerated over all cell sizes up to a maximum
random          +/-1 cells, size uniform up to a maximum, seeded
informed        loaded from a bank file (no generator)
pca-all-data    top-k covariance eigenvectors of 10x10 patches, per channel
pca-foreground  half the filters from foreground patches, half from background
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np

from .channels import N_CHANNELS
from .rng import derive_rng

MAX_FILTER_CELLS = 64  # sanity cap on rows/cols accepted from files

FAMILIES = (
    "uniform",
    "squares",
    "checkerboards",
    "random",
    "informed",
    "pca-all-data",
    "pca-foreground",
)

PCA_PATCH_PX = 10
PCA_EVAL_STRIDE_PX = 2


class BankParseError(ValueError):
    """Malformed bank file; carries the offending path and line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass
class Filter:
    """A single filter: cell-weight matrix plus a stable string id.

    ``channel`` is set only in per-channel banks and designates the one
    channel the filter applies to.
    """

    id: str
    weights: np.ndarray
    channel: int | None = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"filter {self.id!r}: weights must be 2-D")
        r, c = self.weights.shape
        if not (1 <= r <= MAX_FILTER_CELLS and 1 <= c <= MAX_FILTER_CELLS):
            raise ValueError(f"filter {self.id!r}: invalid size {r}x{c}")
        if not np.any(self.weights):
            raise ValueError(f"filter {self.id!r}: all-zero filter")
        if not np.isfinite(self.weights).all():
            raise ValueError(f"filter {self.id!r}: non-finite weights")

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]

    @property
    def is_integer(self) -> bool:
        return bool(np.all(self.weights == np.rint(self.weights)))

    def __eq__(self, other):
        if not isinstance(other, Filter):
            return NotImplemented
        return (
            self.id == other.id
            and self.channel == other.channel
            and self.weights.shape == other.weights.shape
            and bool(np.all(self.weights == other.weights))
        )


@dataclass
class FilterBank:
    family: str
    filters: list[Filter]
    cell_px: int = 6
    eval_stride_px: int = 6
    per_channel: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown filter family {self.family!r}")
        if not self.filters:
            raise ValueError("filter bank must contain at least one filter")
        if self.cell_px < 1 or self.eval_stride_px < 1:
            raise ValueError("cell_px and eval_stride_px must be >= 1")
        if self.per_channel:
            for f in self.filters:
                if f.channel is None or not (0 <= f.channel < N_CHANNELS):
                    raise ValueError(f"filter {f.id!r}: per-channel bank needs a valid channel")

    def __len__(self) -> int:
        return len(self.filters)

    def __eq__(self, other):
        if not isinstance(other, FilterBank):
            return NotImplemented
        return (
            self.family == other.family
            and self.cell_px == other.cell_px
            and self.eval_stride_px == other.eval_stride_px
            and self.per_channel == other.per_channel
            and self.filters == other.filters
        )

    def support_px(self, f: Filter) -> tuple[int, int]:
        """Pixel extent (height, width) of a filter at this bank's cell size."""
        return f.rows * self.cell_px, f.cols * self.cell_px

    def max_support_px(self) -> tuple[int, int]:
        hs = [f.rows for f in self.filters]
        ws = [f.cols for f in self.filters]
        return max(hs) * self.cell_px, max(ws) * self.cell_px


def make_uniform(cell_px: int = 6) -> FilterBank:
    """Single all-ones 1x1-cell filter; a 4-px cell reproduces plain ACF pooling."""
    f = Filter("uniform", np.ones((1, 1)))
    return FilterBank("uniform", [f], cell_px=cell_px)


def make_squares(n_sizes: int = 16, cell_px: int = 6) -> FilterBank:
    """Uniform square filters with sides 1..n_sizes cells."""
    if n_sizes < 1:
        raise ValueError("n_sizes must be >= 1")
    filters = [Filter(f"sq{s}", np.ones((s, s))) for s in range(1, n_sizes + 1)]
    return FilterBank("squares", filters, cell_px=cell_px)


def make_checkerboards(max_rows: int = 4, max_cols: int = 4, cell_px: int = 6) -> FilterBank:
    """Uniform squares, two-band gradients and checkerboards up to a maximum size.

    For every cell size (m, n) with 1 <= m <= max_rows and 1 <= n <= max_cols:

    * one uniform filter when m == n;
    * one horizontal gradient per column split k in [1, n): first k columns
      +1, the rest -1;
    * one vertical gradient per row split k in [1, m);
    * one checkerboard ((-1)^(i+j) pattern, +1 at top-left) when m, n >= 2.

    Sign-flipped duplicates are never emitted. The maxima 2x2 / 3x3 / 4x3 /
    4x4 produce 7 / 25 / 39 / 61 filters.
    """
    if max_rows < 1 or max_cols < 1:
        raise ValueError("max_rows and max_cols must be >= 1")
    filters: list[Filter] = []
    for m in range(1, max_rows + 1):
        for n in range(1, max_cols + 1):
            if m == n:
                filters.append(Filter(f"cb{m}x{n}-uni", np.ones((m, n))))
            for k in range(1, n):
                w = np.ones((m, n))
                w[:, k:] = -1.0
                filters.append(Filter(f"cb{m}x{n}-h{k}", w))
            for k in range(1, m):
                w = np.ones((m, n))
                w[k:, :] = -1.0
                filters.append(Filter(f"cb{m}x{n}-v{k}", w))
            if m >= 2 and n >= 2:
                i, j = np.indices((m, n))
                filters.append(Filter(f"cb{m}x{n}-ck", np.where((i + j) % 2 == 0, 1.0, -1.0)))
    return FilterBank("checkerboards", filters, cell_px=cell_px)


def make_random(n: int, max_rows: int = 4, max_cols: int = 4, seed: int = 0,
                cell_px: int = 6) -> FilterBank:
    """n random +/-1 filters, size uniform over {1..max_rows} x {1..max_cols}.

    All-constant draws are resampled (a constant filter duplicates the uniform
    family), as are duplicates and sign-flips of already accepted filters.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = derive_rng(seed, "random-filter-bank")
    filters: list[Filter] = []
    seen: set[bytes] = set()
    attempts = 0
    max_attempts = 10_000 * n
    while len(filters) < n:
        attempts += 1
        if attempts > max_attempts:
            raise ValueError(
                f"could not draw {n} distinct random filters within {max_attempts} attempts"
            )
        r = int(rng.integers(1, max_rows + 1))
        c = int(rng.integers(1, max_cols + 1))
        w = rng.integers(0, 2, size=(r, c)).astype(np.float64) * 2.0 - 1.0
        if np.all(w == w.flat[0]):
            continue
        key = w.tobytes() + bytes([r, c])
        neg_key = (-w).tobytes() + bytes([r, c])
        if key in seen or neg_key in seen:
            continue
        seen.add(key)
        filters.append(Filter(f"rnd{len(filters):03d}", w))
    return FilterBank("random", filters, cell_px=cell_px)


def _pca_filters(patches: np.ndarray, k: int, channel: int, tag: str) -> tuple[list[Filter], np.ndarray]:
    """Top-k unit-norm eigenpatch filters of one channel's patch set."""
    patches = np.asarray(patches, dtype=np.float64)
    n = patches.shape[0]
    dim = PCA_PATCH_PX * PCA_PATCH_PX
    if patches.ndim != 3 or patches.shape[1:] != (PCA_PATCH_PX, PCA_PATCH_PX):
        raise ValueError(f"channel {channel}: patches must be (n, {PCA_PATCH_PX}, {PCA_PATCH_PX})")
    if n < 10 * dim:
        raise ValueError(
            f"channel {channel}: need at least {10 * dim} patches for PCA, got {n}"
        )
    x = patches.reshape(n, dim)
    x = x - x.mean(axis=0)
    cov = (x.T @ x) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    order = np.argsort(evals)[::-1][:k]
    filters = []
    for rank, idx in enumerate(order):
        v = evecs[:, idx].copy()
        nz = np.flatnonzero(np.abs(v) > 1e-12)
        if nz.size and v[nz[0]] < 0:  # deterministic sign: first nonzero positive
            v = -v
        v /= np.linalg.norm(v)
        filters.append(Filter(f"pca-c{channel}-{tag}{rank}", v.reshape(PCA_PATCH_PX, PCA_PATCH_PX),
                              channel=channel))
    return filters, evals[order]


def learn_pca(patches, k: int = 4, split: str = "all-data") -> FilterBank:
    """Learn a per-channel PCA filter bank from 10x10-px channel patches.

    ``patches`` is an array (or sequence) of per-channel patch sets, shape
    (10, n, 10, 10), for split="all-data"; for split="foreground-background"
    it is a (foreground, background) pair of such arrays and k/2 filters per
    channel come from each set. Filters are unit-norm eigenvectors of the
    mean-centred patch covariance, highest eigenvalue first, with the sign
    fixed so the first nonzero coefficient is positive.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if split == "all-data":
        sets = [("", patches)]
        family = "pca-all-data"
        per_set_k = k
    elif split == "foreground-background":
        if k % 2 != 0:
            raise ValueError("foreground-background split needs an even k")
        fg, bg = patches
        sets = [("fg", fg), ("bg", bg)]
        family = "pca-foreground"
        per_set_k = k // 2
    else:
        raise ValueError(f"unknown split {split!r}")

    filters: list[Filter] = []
    for channel in range(N_CHANNELS):
        for tag, patch_set in sets:
            chan_patches = np.asarray(patch_set[channel])
            fs, _ = _pca_filters(chan_patches, per_set_k, channel, tag)
            filters.extend(fs)
    return FilterBank(family, filters, cell_px=1,
                      eval_stride_px=PCA_EVAL_STRIDE_PX, per_channel=True)


def _format_weight(w: float) -> str:
    if w == np.rint(w) and abs(w) < 1e15:
        return str(int(w))
    return repr(float(w))  # shortest decimal that round-trips exactly


def write_bank(bank: FilterBank, out: io.TextIOBase, header_comments=()) -> None:
    for line in header_comments:
        out.write(f"# {line}\n")
    out.write("filterbank v1\n")
    out.write(f"family {bank.family}\n")
    out.write(f"cell_px {bank.cell_px}\n")
    out.write(f"eval_stride_px {bank.eval_stride_px}\n")
    out.write(f"per_channel {int(bank.per_channel)}\n")
    out.write(f"filters {len(bank.filters)}\n")
    for f in bank.filters:
        chan = f" channel={f.channel}" if f.channel is not None else ""
        out.write(f"filter {f.id} {f.rows} {f.cols}{chan}\n")
        for row in f.weights:
            out.write(" ".join(_format_weight(w) for w in row) + "\n")


def save_bank(bank: FilterBank, path: str | os.PathLike, header_comments=()) -> None:
    """Write a bank to the line-oriented text format (lossless round trip)."""
    with open(path, "w", encoding="utf-8") as fh:
        write_bank(bank, fh, header_comments)


def load_bank(path: str | os.PathLike) -> FilterBank:
    """Parse a bank file; raises :class:`BankParseError` with file/line info."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    return parse_bank_lines(lines, source=path)


def parse_bank_lines(lines, source="<bank>") -> FilterBank:
    """Parse bank-format text lines (used for files and embedded sections)."""
    path = source
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            raw = lines[pos]
            pos += 1
            stripped = raw.strip()
            if stripped and not stripped.startswith("#"):
                return pos, stripped
        return pos, None

    def expect_kv(key):
        line_no, line = next_line()
        if line is None or not line.startswith(key + " "):
            raise BankParseError(path, line_no, f"expected '{key} ...'")
        return line_no, line[len(key) + 1:].strip()

    line_no, line = next_line()
    if line != "filterbank v1":
        raise BankParseError(path, line_no, "missing 'filterbank v1' header")
    _, family = expect_kv("family")
    if family not in FAMILIES:
        raise BankParseError(path, pos, f"unknown family {family!r}")
    _, cell_px = expect_kv("cell_px")
    _, stride = expect_kv("eval_stride_px")
    _, per_channel = expect_kv("per_channel")
    _, count = expect_kv("filters")
    try:
        cell_px, stride, per_channel, count = int(cell_px), int(stride), int(per_channel), int(count)
    except ValueError as e:
        raise BankParseError(path, pos, f"bad header value: {e}") from None

    filters = []
    for _ in range(count):
        line_no, line = next_line()
        if line is None:
            raise BankParseError(path, line_no, f"expected {count} filters, file ended early")
        parts = line.split()
        if len(parts) not in (4, 5) or parts[0] != "filter":
            raise BankParseError(path, line_no, f"expected 'filter <id> <rows> <cols>', got {line!r}")
        fid = parts[1]
        try:
            rows, cols = int(parts[2]), int(parts[3])
        except ValueError:
            raise BankParseError(path, line_no, f"bad filter dims in {line!r}") from None
        channel = None
        if len(parts) == 5:
            if not parts[4].startswith("channel="):
                raise BankParseError(path, line_no, f"unexpected token {parts[4]!r}")
            channel = int(parts[4].split("=", 1)[1])
        if not (1 <= rows <= MAX_FILTER_CELLS and 1 <= cols <= MAX_FILTER_CELLS):
            raise BankParseError(path, line_no, f"filter {fid!r}: invalid size {rows}x{cols}")
        weights = np.empty((rows, cols), dtype=np.float64)
        for r in range(rows):
            row_no, row_line = next_line()
            if row_line is None:
                raise BankParseError(path, row_no, f"filter {fid!r}: missing weight row {r}")
            vals = row_line.split()
            if len(vals) != cols:
                raise BankParseError(path, row_no,
                                     f"filter {fid!r}: expected {cols} weights, got {len(vals)}")
            try:
                weights[r] = [float(v) for v in vals]
            except ValueError:
                raise BankParseError(path, row_no, f"filter {fid!r}: non-numeric weight") from None
        try:
            filters.append(Filter(fid, weights, channel=channel))
        except ValueError as e:
            raise BankParseError(path, line_no, str(e)) from None

    line_no, trailing = next_line()
    if trailing is not None:
        raise BankParseError(path, line_no, f"unexpected trailing content {trailing!r}")
    try:
        return FilterBank(family, filters, cell_px=cell_px, eval_stride_px=stride,
                          per_channel=bool(per_channel))
    except ValueError as e:
        raise BankParseError(path, pos, str(e)) from None
