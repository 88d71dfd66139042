"""Staged detector training with hard negative mining.

The schedule is a strictly increasing list of tree counts, e.g.
[32, 512, 1024, 2048, 4096]. Round 0 boosts the first count on positives plus
an initial pool of random negatives; every following round runs the current
detector over the corpus images at the detection stride, harvests the
top-scoring false positives (NMS-deduplicated, capped by the mining quota),
appends them to the negative pool and retrains from scratch at the next tree
count. The final forest has the schedule's last size.

Features are recomputed from cached window crops at every stage: split search
runs on 256-bin quantized responses whose bounds come from the then-current
training set, so the bins must be rebuilt whenever the pool grows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .channels import ChannelOptions, compute_channels
from .data import Corpus, WindowSample, sample_negatives, sample_positives
from .detector import BoundingBox, Detection, PyramidSpec, detect_images
from .featuremap import feature_count, feature_indices, window_features
from .filterbank import FilterBank
from .forest import BoostedForest, QuantizedData, boost, quantize_values
from .imgutil import resize_bilinear

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MiningOptions:
    quota: int = 10_000
    score_min: float = 0.0
    nms_overlap: float = 0.65
    exclusion_iou: float = 0.1


def _crop_batches(samples: list[WindowSample], channel_opts: ChannelOptions,
                  batch: int):
    for start in range(0, len(samples), batch):
        chunk = samples[start:start + batch]
        stacks = np.stack([compute_channels(s.crop, channel_opts) for s in chunk])
        yield start, stacks


def build_quantized(samples: list[WindowSample], bank: FilterBank,
                    window: tuple[int, int],
                    channel_opts: ChannelOptions = ChannelOptions(),
                    batch: int = 256) -> QuantizedData:
    """Two-pass feature quantization of window samples into a QuantizedData.

    Pass one finds per-feature bounds over the whole set, pass two fills the
    feature-major uint8 bin matrix. Crops are (win_h, win_w, 3) images.
    """
    if not samples:
        raise ValueError("no samples to quantize")
    fmap = feature_indices(bank, window)
    n_feat = len(fmap)
    assert n_feat == feature_count(bank, window)
    lo = np.full(n_feat, np.inf)
    hi = np.full(n_feat, -np.inf)
    for _, stacks in _crop_batches(samples, channel_opts, batch):
        feats = window_features(stacks, bank).astype(np.float64)
        np.minimum(lo, feats.min(axis=0), out=lo)
        np.maximum(hi, feats.max(axis=0), out=hi)
    bins = np.empty((n_feat, len(samples)), dtype=np.uint8)
    for start, stacks in _crop_batches(samples, channel_opts, batch):
        feats = window_features(stacks, bank).astype(np.float64)
        bins[:, start:start + stacks.shape[0]] = quantize_values(feats, lo, hi).T
    labels = np.array([1 if s.label == "positive" else -1 for s in samples], dtype=np.int8)
    return QuantizedData(bins=np.ascontiguousarray(bins), labels=labels, lo=lo, hi=hi,
                         feature_map=fmap, bank=bank, window=window)


def train_boosted(positives: list[WindowSample], negatives: list[WindowSample],
                  bank: FilterBank, window: tuple[int, int], n_trees: int,
                  depth: int = 2, variant: str = "discrete",
                  channel_opts: ChannelOptions = ChannelOptions()) -> BoostedForest:
    """Quantize the sample pool and boost a forest over it."""
    if not positives or not negatives:
        raise ValueError("need both positive and negative samples")
    data = build_quantized(positives + negatives, bank, window, channel_opts)
    return boost(data, n_trees=n_trees, depth=depth, variant=variant)


def mine_hard_negatives(forest: BoostedForest, corpus: Corpus, opts: MiningOptions,
                        spec: PyramidSpec, stride: int = 6,
                        channel_opts: ChannelOptions = ChannelOptions(),
                        workers: int | None = None) -> list[WindowSample]:
    """Top-scoring false positives of the current detector, as window samples.

    Detections overlapping an annotation (object-box IoU above the exclusion
    threshold) are discarded; the rest are NMS-deduplicated per image, pooled,
    and the best ``opts.quota`` become negative windows cropped from the exact
    pyramid level that produced them.
    """
    images = [(e.image_id, e.load_image()) for e in corpus.entries]
    by_image = detect_images(images, forest, spec, stride=stride,
                             score_min=opts.score_min, nms_overlap=opts.nms_overlap,
                             channel_opts=channel_opts, workers=workers)
    candidates: list[tuple[float, int, Detection]] = []
    for ei, entry in enumerate(corpus.entries):
        for det in by_image[entry.image_id]:
            if any(det.box.iou(a.box) > opts.exclusion_iou for a in entry.annotations):
                continue
            candidates.append((-det.score, ei, det))
    candidates.sort(key=lambda t: (t[0], t[1], t[2].box.y, t[2].box.x))
    candidates = candidates[:opts.quota]

    win_w, win_h = spec.window
    off_x, off_y = spec.object_offset()
    out: list[WindowSample] = []
    by_level: dict[tuple[int, float], list[Detection]] = {}
    for _, ei, det in candidates:
        by_level.setdefault((ei, det.scale), []).append(det)
    for (ei, scale), dets in sorted(by_level.items(), key=lambda kv: (kv[0][0], -kv[0][1])):
        entry = corpus.entries[ei]
        img = dict(images)[entry.image_id]
        rh = int(round(img.shape[0] * scale))
        rw = int(round(img.shape[1] * scale))
        resized = resize_bilinear(img, rh, rw) if scale != 1.0 else img
        for det in dets:
            wx = int(round(det.box.x * scale - off_x))
            wy = int(round(det.box.y * scale - off_y))
            crop = resized[wy:wy + win_h, wx:wx + win_w]
            if crop.shape[:2] != (win_h, win_w):
                continue  # safety: should not happen for detector output
            src_win = BoundingBox(wx / scale, wy / scale, win_w / scale, win_h / scale)
            out.append(WindowSample(entry.image_id, src_win, "negative",
                                    np.ascontiguousarray(crop)))
    if len(out) < opts.quota:
        log.warning("mining found %d of %d requested hard negatives", len(out), opts.quota)
    return out


def train_staged(corpus: Corpus, bank: FilterBank, schedule: list[int],
                 mining: MiningOptions = MiningOptions(), *,
                 window: tuple[int, int] = (60, 120),
                 object_frac: tuple[float, float] = (0.5, 1.0),
                 depth: int = 2, variant: str = "discrete", seed: int = 0,
                 initial_negatives: int = 10_000, jitter: str = "mirror",
                 pyramid: PyramidSpec | None = None, stride: int = 6,
                 channel_opts: ChannelOptions = ChannelOptions(),
                 workers: int | None = None) -> BoostedForest:
    """Run the full staged-training recipe over a corpus."""
    if not schedule:
        raise ValueError("schedule must not be empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError(f"schedule must be strictly increasing, got {schedule}")
    if pyramid is None:
        pyramid = PyramidSpec(window=window, object_frac=object_frac)
    if pyramid.window != window:
        raise ValueError("pyramid window must match the model window")

    positives = sample_positives(corpus, window=window, object_frac=object_frac,
                                 jitter=jitter)
    if not positives:
        raise ValueError("corpus produced no positive windows")
    negatives = sample_negatives(
        corpus, initial_negatives, seed, exclusion_iou=mining.exclusion_iou,
        window=window, object_frac=object_frac,
        height_range=(pyramid.min_height, pyramid.max_height))
    log.info("stage 0 pool: %d positives, %d negatives", len(positives), len(negatives))

    forest: BoostedForest | None = None
    for stage, n_trees in enumerate(schedule):
        forest = train_boosted(positives, negatives, bank, window, n_trees,
                               depth=depth, variant=variant, channel_opts=channel_opts)
        log.info("stage %d: boosted %d trees (%d samples)", stage, len(forest.trees),
                 len(positives) + len(negatives))
        if stage + 1 < len(schedule):
            mined = mine_hard_negatives(forest, corpus, mining, pyramid, stride=stride,
                                        channel_opts=channel_opts, workers=workers)
            log.info("stage %d mining: %d hard negatives", stage, len(mined))
            negatives = negatives + mined
    return forest
