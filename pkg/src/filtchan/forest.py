"""Boosted decision forests over quantized filtered-channel features.

Trees are shallow (depth 2..5), fit by exhaustive greedy search over all
features and 256 quantized thresholds at every node; no randomization. Two
boosting variants are supported:

* discrete Adaboost: +/-1 leaves, tree weight 0.5*ln((1-e)/e), weight update
  w *= exp(-y * alpha * h);
* Realboost: real-valued leaves 0.5*ln((W+ + eps)/(W- + eps)) with smoothing
  eps = 1/(2n), all tree weights one, same multiplicative update.

Split search happens on 256-bin quantized features (bounds taken from the
training set); thresholds are de-quantized to bin upper edges for inference
on raw responses, with the left-child predicate ``value < threshold``.
Training stops early if a weak learner's weighted error reaches 0.5 or one
class's weight mass vanishes.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from ._split import N_BINS, best_split
from .channels import N_CHANNELS
from .featuremap import FeatureIndex, ResponseStack
from .filterbank import Filter, FilterBank, parse_bank_lines, write_bank


@dataclass
class Leaf:
    value: float


@dataclass
class SplitNode:
    feature: FeatureIndex
    threshold: float
    left: "SplitNode | Leaf"
    right: "SplitNode | Leaf"
    # training-time addressing; not serialized
    column: int | None = None
    bin_threshold: int | None = None


@dataclass
class Tree:
    root: SplitNode | Leaf
    depth: int

    def split_nodes(self) -> list[SplitNode]:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, SplitNode):
                out.append(node)
                stack.append(node.right)
                stack.append(node.left)
        return out


@dataclass
class BoostHistory:
    weak_errors: list[float] = field(default_factory=list)
    exp_losses: list[float] = field(default_factory=list)
    train_errors: list[float] = field(default_factory=list)
    halted: str | None = None


@dataclass
class BoostedForest:
    trees: list[Tree]
    tree_weights: np.ndarray
    variant: str  # "discrete" | "real"
    bank: FilterBank | None = None
    window: tuple[int, int] | None = None  # (width, height) in pixels
    cascade: np.ndarray | None = None  # per-tree rejection thresholds
    history: BoostHistory | None = None

    def n_split_nodes(self) -> int:
        return sum(len(t.split_nodes()) for t in self.trees)


@dataclass
class QuantizedData:
    """Training container: feature-major bins plus de-quantization bounds."""

    bins: np.ndarray  # (F, n) uint8, C-contiguous
    labels: np.ndarray  # (n,) int8 in {-1, +1}
    lo: np.ndarray  # (F,) float64 feature minima
    hi: np.ndarray  # (F,) float64 feature maxima
    feature_map: list[FeatureIndex] | None = None
    bank: FilterBank | None = None
    window: tuple[int, int] | None = None

    @property
    def n_samples(self) -> int:
        return self.bins.shape[1]

    @property
    def n_features(self) -> int:
        return self.bins.shape[0]


def quantize_values(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Map raw feature values (n, F) to 256 equal-width bins (n, F) uint8."""
    rng = hi - lo
    scale = np.where(rng > 0, N_BINS / np.where(rng > 0, rng, 1.0), 0.0)
    b = np.floor((x - lo) * scale)
    return np.clip(b, 0, N_BINS - 1).astype(np.uint8)


def quantize_matrix(x: np.ndarray, labels: np.ndarray, **kw) -> QuantizedData:
    """Quantize a raw (n, F) feature matrix with bounds from the data itself."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    bins = np.ascontiguousarray(quantize_values(x, lo, hi).T)
    labels = np.where(np.asarray(labels) > 0, 1, -1).astype(np.int8)
    return QuantizedData(bins=bins, labels=labels, lo=lo, hi=hi, **kw)


def dequantize_threshold(t_bin: int, lo: float, hi: float) -> float:
    """Upper edge of bin t: raw value x goes left iff x < threshold."""
    return lo + (t_bin + 1) * (hi - lo) / N_BINS


def _leaf_value(wp: float, wn: float, variant: str, eps: float) -> float:
    if variant == "discrete":
        return 1.0 if wp >= wn else -1.0
    return 0.5 * math.log((wp + eps) / (wn + eps))


def _node_as_leaf_error(wp: float, wn: float, use_z: bool) -> float:
    if use_z:
        return 2.0 * math.sqrt(wp * wn)
    return min(wp, wn)


def _fit_node(data: QuantizedData, idx: np.ndarray, w: np.ndarray,
              y_pos: np.ndarray, depth: int, variant: str, eps: float):
    wp = float(w[idx[y_pos[idx]]].sum())
    wn = float(w[idx[~y_pos[idx]]].sum())
    use_z = variant == "real"
    if depth == 0 or wp == 0.0 or wn == 0.0:
        return Leaf(_leaf_value(wp, wn, variant, eps))
    f, t_bin, err = best_split(data.bins, idx, w, y_pos, use_z)
    # the best split can never be worse than the node kept as a leaf; ties are
    # allowed to proceed (XOR-style data only improves one level deeper), but
    # a split that worsens the node or empties a child falls back to a leaf.
    # The slack absorbs summation-order rounding between the two error sums.
    if t_bin < 0 or err > _node_as_leaf_error(wp, wn, use_z) + 1e-9 * (wp + wn):
        return Leaf(_leaf_value(wp, wn, variant, eps))
    go_left = data.bins[f, idx] <= t_bin
    left_idx = idx[go_left]
    right_idx = idx[~go_left]
    if left_idx.size == 0 or right_idx.size == 0:
        return Leaf(_leaf_value(wp, wn, variant, eps))
    left = _fit_node(data, left_idx, w, y_pos, depth - 1, variant, eps)
    right = _fit_node(data, right_idx, w, y_pos, depth - 1, variant, eps)
    feature = data.feature_map[f] if data.feature_map is not None else FeatureIndex(-1, f, 0, 0)
    return SplitNode(feature=feature,
                     threshold=dequantize_threshold(t_bin, float(data.lo[f]), float(data.hi[f])),
                     left=left, right=right, column=f, bin_threshold=t_bin)


def fit_tree(data: QuantizedData, weights: np.ndarray, depth: int,
             variant: str = "discrete") -> Tree:
    """Fit one depth-limited tree by exhaustive greedy split search.

    Both classes must be present with positive weight. Recursion stops at
    ``depth``, at pure nodes, or when no split beats the node kept as a leaf.
    """
    if not 1 <= depth <= 8:
        raise ValueError(f"unsupported tree depth {depth}")
    if variant not in ("discrete", "real"):
        raise ValueError(f"unknown boosting variant {variant!r}")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (data.n_samples,) or np.any(w <= 0):
        raise ValueError("weights must be positive, one per sample")
    y_pos = data.labels > 0
    if not y_pos.any() or y_pos.all():
        raise ValueError("both classes must be present to fit a tree")
    eps = 1.0 / (2.0 * data.n_samples)
    idx = np.arange(data.n_samples, dtype=np.int64)
    root = _fit_node(data, idx, w, y_pos, depth, variant, eps)
    return Tree(root=root, depth=depth)


def apply_tree_bins(tree: Tree, bins: np.ndarray, idx: np.ndarray | None = None) -> np.ndarray:
    """Leaf outputs for quantized samples (training-path evaluation)."""
    if idx is None:
        idx = np.arange(bins.shape[1], dtype=np.int64)
    out = np.empty(idx.shape[0], dtype=np.float64)

    def walk(node, sel):
        if isinstance(node, Leaf):
            out[sel] = node.value
            return
        go_left = bins[node.column, idx[sel]] <= node.bin_threshold
        walk(node.left, sel[go_left])
        walk(node.right, sel[~go_left])

    walk(tree.root, np.arange(idx.shape[0]))
    return out


def apply_tree_features(tree: Tree, x: np.ndarray) -> np.ndarray:
    """Leaf outputs for raw feature rows (n, F), using de-quantized thresholds."""
    out = np.empty(x.shape[0], dtype=np.float64)

    def walk(node, sel):
        if isinstance(node, Leaf):
            out[sel] = node.value
            return
        go_left = x[sel, node.column] < node.threshold
        walk(node.left, sel[go_left])
        walk(node.right, sel[~go_left])

    walk(tree.root, np.arange(x.shape[0]))
    return out


def boost(data: QuantizedData, n_trees: int, depth: int = 2,
          variant: str = "discrete") -> BoostedForest:
    """Boost ``n_trees`` depth-limited trees over quantized training data."""
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    n = data.n_samples
    y = data.labels.astype(np.float64)
    y_pos = data.labels > 0
    w = np.full(n, 1.0 / n, dtype=np.float64)
    agg = np.zeros(n, dtype=np.float64)
    trees: list[Tree] = []
    alphas: list[float] = []
    hist = BoostHistory()

    for _ in range(n_trees):
        w_sum = w.sum()
        if w_sum <= 0 or w[y_pos].sum() == 0 or w[~y_pos].sum() == 0:
            hist.halted = "class weight mass vanished"
            break
        w /= w_sum
        tree = fit_tree(data, w, depth, variant)
        h = apply_tree_bins(tree, data.bins)
        weak_err = float(w[np.sign(h) != y].sum())
        if weak_err >= 0.5:
            hist.halted = f"weak error {weak_err:.4f} >= 0.5"
            break
        if variant == "discrete":
            err = max(weak_err, 1e-10)  # perfect weak learner: clamp
            alpha = 0.5 * math.log((1.0 - err) / err)
        else:
            alpha = 1.0
        trees.append(tree)
        alphas.append(alpha)
        agg += alpha * h
        w *= np.exp(-y * alpha * h)
        hist.weak_errors.append(weak_err)
        hist.exp_losses.append(float(np.exp(-y * agg).sum()))
        hist.train_errors.append(float(np.mean(np.sign(agg) != y)))

    return BoostedForest(trees=trees, tree_weights=np.array(alphas, dtype=np.float64),
                         variant=variant, bank=data.bank, window=data.window,
                         history=hist)


def score_samples(forest: BoostedForest, x: np.ndarray) -> np.ndarray:
    """Forest scores for raw feature rows (n, F)."""
    out = np.zeros(x.shape[0], dtype=np.float64)
    for tree, alpha in zip(forest.trees, forest.tree_weights):
        out += alpha * apply_tree_features(tree, x)
    return out


def calibrate_cascade(forest: BoostedForest, pos_features: np.ndarray,
                      margin: float = 1.0, percentile: float = 0.5) -> np.ndarray:
    """Per-tree rejection trace from positives' running score sums.

    Threshold t is the 0.5-percentile of the positives' partial sums after
    tree t, minus the margin. Stored on ``forest.cascade``.
    """
    running = np.zeros(pos_features.shape[0], dtype=np.float64)
    thresholds = np.empty(len(forest.trees), dtype=np.float64)
    for t, (tree, alpha) in enumerate(zip(forest.trees, forest.tree_weights)):
        running += alpha * apply_tree_features(tree, pos_features)
        thresholds[t] = np.percentile(running, percentile) - margin
    forest.cascade = thresholds
    return thresholds


def _node_value_at(node, resp: ResponseStack, gy: int, gx: int) -> float:
    while isinstance(node, SplitNode):
        fi = node.feature
        v = resp.plane(fi.channel, fi.filter)[gy + fi.cell_y, gx + fi.cell_x]
        node = node.left if v < node.threshold else node.right
    return node.value


def score_window(forest: BoostedForest, resp: ResponseStack, origin: tuple[int, int],
                 use_cascade: bool = False) -> float:
    """Score one window whose top-left pixel is ``origin`` = (x, y).

    The origin must be stride-aligned and the window fully inside the
    response stack. With ``use_cascade`` and a calibrated forest, scoring
    exits early once the running sum falls below the rejection trace.
    """
    if forest.window is None:
        raise ValueError("forest has no window geometry")
    x, y = origin
    s = resp.stride
    if x % s or y % s:
        raise ValueError(f"window origin {origin} not aligned to stride {s}")
    win_w, win_h = forest.window
    if x < 0 or y < 0 or x + win_w > resp.width or y + win_h > resp.height:
        raise ValueError(f"window at {origin} exceeds stack {resp.width}x{resp.height}")
    gx, gy = x // s, y // s
    total = 0.0
    cascade = forest.cascade if use_cascade else None
    for t, (tree, alpha) in enumerate(zip(forest.trees, forest.tree_weights)):
        total += alpha * _node_value_at(tree.root, resp, gy, gx)
        if cascade is not None and total < cascade[t]:
            return total
    return total


def _node_map(node, resp: ResponseStack, nwy: int, nwx: int, step: int) -> np.ndarray:
    if isinstance(node, Leaf):
        return np.full((nwy, nwx), node.value, dtype=np.float64)
    fi = node.feature
    plane = resp.plane(fi.channel, fi.filter)
    sub = plane[fi.cell_y: fi.cell_y + (nwy - 1) * step + 1: step,
                fi.cell_x: fi.cell_x + (nwx - 1) * step + 1: step]
    left = _node_map(node.left, resp, nwy, nwx, step)
    right = _node_map(node.right, resp, nwy, nwx, step)
    return np.where(sub < node.threshold, left, right)


def score_map(forest: BoostedForest, resp: ResponseStack, step: int = 1) -> np.ndarray:
    """Scores of every stride-aligned window origin, as a (nwy, nwx) map.

    ``step`` subsamples window origins on the response grid (detection
    stride = step * eval stride). Equivalent to calling
    :func:`score_window` at each origin, but vectorised per tree node.
    """
    if forest.window is None:
        raise ValueError("forest has no window geometry")
    nwy, nwx = resp.window_grid(forest.window, step=step)
    out = np.zeros((nwy, nwx), dtype=np.float64)
    if nwy == 0 or nwx == 0:
        return out
    for tree, alpha in zip(forest.trees, forest.tree_weights):
        out += alpha * _node_map(tree.root, resp, nwy, nwx, step)
    return out


def filter_usage(forest: BoostedForest, per_channel: bool = False) -> np.ndarray:
    """Split-node counts per filter: (F,) summed over channels, or (10, F)."""
    if forest.bank is None:
        raise ValueError("forest carries no filter bank")
    n_filters = len(forest.bank.filters)
    counts = np.zeros((N_CHANNELS, n_filters), dtype=np.int64)
    for tree in forest.trees:
        for node in tree.split_nodes():
            counts[node.feature.channel, node.feature.filter] += 1
    return counts if per_channel else counts.sum(axis=0)


def reduce_bank(forest: BoostedForest, bank: FilterBank, n: int,
                mode: str = "across-channels") -> FilterBank:
    """Bank of the N most frequently used filters of a trained forest.

    "across-channels" sums usage over channels and returns a shared bank;
    "per-channel" keeps counts per channel and returns a per-channel bank
    with the top N filters of each channel (ids get a '@c<k>' suffix).
    Ties break on the lower bank index. If fewer than N distinct filters
    were used, all used filters are returned.
    """
    import logging

    log = logging.getLogger(__name__)
    if mode not in ("across-channels", "per-channel"):
        raise ValueError(f"unknown reduction mode {mode!r}")
    if mode == "across-channels":
        counts = filter_usage(forest, per_channel=False)
        used = np.flatnonzero(counts > 0)
        if n > used.size:
            log.warning("requested top-%d filters but only %d are used", n, used.size)
            n = used.size
        order = sorted(used, key=lambda i: (-counts[i], i))[:n]
        filters = [bank.filters[i] for i in order]
        return FilterBank(bank.family, filters, cell_px=bank.cell_px,
                          eval_stride_px=bank.eval_stride_px, per_channel=bank.per_channel)

    counts = filter_usage(forest, per_channel=True)
    filters = []
    for c in range(N_CHANNELS):
        used = np.flatnonzero(counts[c] > 0)
        take = min(n, used.size)
        if take < n:
            log.warning("channel %d: only %d used filters (requested %d)", c, used.size, n)
        order = sorted(used, key=lambda i: (-counts[c, i], i))[:take]
        for i in order:
            src = bank.filters[i]
            filters.append(Filter(f"{src.id}@c{c}", src.weights.copy(), channel=c))
    return FilterBank(bank.family, filters, cell_px=bank.cell_px,
                      eval_stride_px=bank.eval_stride_px, per_channel=True)


def spatial_influence(forest: BoostedForest) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel pixel maps counting split nodes whose filter support
    (nonzero cells only) covers each window pixel; plus the across-channel sum.
    """
    if forest.bank is None or forest.window is None:
        raise ValueError("forest needs a bank and window geometry")
    win_w, win_h = forest.window
    bank = forest.bank
    cp = bank.cell_px
    s = bank.eval_stride_px
    maps = np.zeros((N_CHANNELS, win_h, win_w), dtype=np.float64)
    for tree in forest.trees:
        for node in tree.split_nodes():
            fi = node.feature
            f = bank.filters[fi.filter]
            x0 = fi.cell_x * s
            y0 = fi.cell_y * s
            for i in range(f.rows):
                for j in range(f.cols):
                    if f.weights[i, j] == 0.0:
                        continue
                    maps[fi.channel,
                         y0 + i * cp: y0 + (i + 1) * cp,
                         x0 + j * cp: x0 + (j + 1) * cp] += 1.0
    return maps, maps.sum(axis=0)


def save_model(forest: BoostedForest, path: str | os.PathLike, header_comments=()) -> None:
    """Write a forest (with its embedded bank) as versioned decimal text.

    Reals are written with shortest-round-trip decimals, so
    save -> load -> score is bit-identical.
    """
    if forest.bank is None or forest.window is None:
        raise ValueError("only forests with a bank and window geometry are persistable")
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        fh.write("filtchan-model v1\n")
        fh.write(f"variant {forest.variant}\n")
        fh.write(f"window {forest.window[0]} {forest.window[1]}\n")
        if forest.cascade is None:
            fh.write("cascade none\n")
        else:
            fh.write("cascade " + " ".join(repr(float(v)) for v in forest.cascade) + "\n")
        fh.write("bank\n")
        write_bank(forest.bank, fh)
        fh.write("endbank\n")
        fh.write(f"trees {len(forest.trees)}\n")
        for ti, (tree, alpha) in enumerate(zip(forest.trees, forest.tree_weights)):
            lines: list[str] = []

            def emit(node) -> int:
                my_id = len(lines)
                lines.append("")
                if isinstance(node, Leaf):
                    lines[my_id] = f"n {my_id} leaf {node.value!r}"
                else:
                    li = emit(node.left)
                    ri = emit(node.right)
                    fi = node.feature
                    lines[my_id] = (f"n {my_id} split {fi.channel} {fi.filter} "
                                    f"{fi.cell_x} {fi.cell_y} {node.threshold!r} {li} {ri}")
                return my_id

            emit(tree.root)
            fh.write(f"tree {ti} weight {float(alpha)!r} depth {tree.depth} nodes {len(lines)}\n")
            fh.write("\n".join(lines) + "\n")


def load_model(path: str | os.PathLike) -> BoostedForest:
    """Parse a model file written by :func:`save_model`."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            ln = lines[pos]
            pos += 1
            stripped = ln.strip()
            if stripped and not stripped.startswith("#"):
                return stripped
        return None

    def fail(msg):
        raise ValueError(f"{path}:{pos}: {msg}")

    if next_line() != "filtchan-model v1":
        fail("missing 'filtchan-model v1' header")
    ln = next_line()
    if not ln or not ln.startswith("variant "):
        fail("expected variant")
    variant = ln.split()[1]
    ln = next_line()
    if not ln or not ln.startswith("window "):
        fail("expected window")
    _, w_str, h_str = ln.split()
    window = (int(w_str), int(h_str))
    ln = next_line()
    if not ln or not ln.startswith("cascade"):
        fail("expected cascade")
    parts = ln.split()
    cascade = None if parts[1:] == ["none"] else np.array([float(v) for v in parts[1:]])
    if next_line() != "bank":
        fail("expected bank section")
    bank_lines = []
    while True:
        ln = next_line()
        if ln is None:
            fail("unterminated bank section")
        if ln == "endbank":
            break
        bank_lines.append(ln)
    bank = parse_bank_lines(bank_lines, source=f"{path}[bank]")

    ln = next_line()
    if not ln or not ln.startswith("trees "):
        fail("expected trees count")
    n_trees = int(ln.split()[1])
    trees: list[Tree] = []
    weights: list[float] = []
    for _ in range(n_trees):
        ln = next_line()
        if not ln or not ln.startswith("tree "):
            fail("expected tree header")
        parts = ln.split()
        weights.append(float(parts[3]))
        depth = int(parts[5])
        n_nodes = int(parts[7])
        raw = {}
        for _ in range(n_nodes):
            nl = next_line()
            if nl is None:
                fail("tree ended early")
            toks = nl.split()
            if toks[0] != "n":
                fail(f"expected node line, got {nl!r}")
            raw[int(toks[1])] = toks[2:]

        def build(node_id):
            toks = raw[node_id]
            if toks[0] == "leaf":
                return Leaf(float(toks[1]))
            if toks[0] != "split":
                fail(f"unknown node kind {toks[0]!r}")
            channel, filt, cx, cy = (int(v) for v in toks[1:5])
            thr = float(toks[5])
            return SplitNode(feature=FeatureIndex(channel, filt, cx, cy), threshold=thr,
                             left=build(int(toks[6])), right=build(int(toks[7])))

        trees.append(Tree(root=build(0), depth=depth))
    return BoostedForest(trees=trees, tree_weights=np.array(weights, dtype=np.float64),
                         variant=variant, bank=bank, window=window, cascade=cascade)
