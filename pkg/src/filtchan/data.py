"""Dataset ingestion, window sampling, patch extraction, synthetic corpora.

Corpora are plain-text manifests next to their image files:

    corpus <id> <split>
    subsample <k>            (optional; keep every k-th image entry)
    image <relative path>
    anno <x> <y> <w> <h> <occlusion> <ignore>
    image ...

Annotation boxes are clamped to the image bounds at load time (image sizes
are read from file headers, without decoding). Round trips through
``save_corpus``/``load_corpus`` are lossless.

Positive windows are height-anchored: each annotation is wrapped in a model
window through the object-in-window geometry, cropped (mirror padding for
moderate border overflow) and resized to the model window. Negative windows
are drawn uniformly over (image, scale, position) and rejected near
annotations. All sampling is seeded and reproducible.

The synthetic corpus renders pedestrian-like targets (rounded-rectangle
torso plus head disc, colour-biased, noisy) over smooth cluttered
backgrounds with distractor shapes, writing real image files plus exact
annotations, so the whole pipeline can run end-to-end at desk scale.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channels import ChannelOptions, compute_channels
from .detector import BoundingBox
from .evaluate import Annotation
from .imgutil import image_size, load_image, resize_bilinear, sample_window, save_image
from .rng import derive_rng

log = logging.getLogger(__name__)


class ManifestError(ValueError):
    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")


@dataclass
class CorpusEntry:
    image_path: str
    annotations: list[Annotation]
    image_id: str

    def load_image(self) -> np.ndarray:
        return load_image(self.image_path)


@dataclass
class Corpus:
    entries: list[CorpusEntry]
    id: str = "corpus"
    split: str = "train"

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class WindowSample:
    """One training window: source provenance plus the resized crop."""

    image_id: str
    box: BoundingBox  # window box in source-image coordinates
    label: str  # "positive" | "negative"
    crop: np.ndarray  # (win_h, win_w, 3) float32
    flipped: bool = False


def load_corpus(path: str | os.PathLike, subsample: int | None = None) -> Corpus:
    """Parse a manifest; raises :class:`ManifestError` with file/line info."""
    path = Path(path)
    base = path.parent
    corpus_id, split = "corpus", "train"
    manifest_subsample = None
    entries: list[CorpusEntry] = []
    current: CorpusEntry | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            kind = parts[0]
            if kind == "corpus":
                if len(parts) != 3:
                    raise ManifestError(path, line_no, "expected 'corpus <id> <split>'")
                corpus_id, split = parts[1], parts[2]
            elif kind == "subsample":
                manifest_subsample = int(parts[1])
            elif kind == "image":
                if len(parts) != 2:
                    raise ManifestError(path, line_no, "expected 'image <path>'")
                rel = parts[1]
                img_path = base / rel
                if not img_path.is_file():
                    raise ManifestError(path, line_no, f"image file not found: {img_path}")
                current = CorpusEntry(image_path=str(img_path), annotations=[], image_id=rel)
                entries.append(current)
            elif kind == "anno":
                if current is None:
                    raise ManifestError(path, line_no, "'anno' before any 'image'")
                if len(parts) != 7:
                    raise ManifestError(path, line_no,
                                        "expected 'anno <x> <y> <w> <h> <occlusion> <ignore>'")
                try:
                    x, y, w, h, occ = (float(v) for v in parts[1:6])
                    ignore = bool(int(parts[6]))
                except ValueError as e:
                    raise ManifestError(path, line_no, f"bad annotation value: {e}") from None
                ih, iw = image_size(current.image_path)
                if x >= 0 and y >= 0 and x + w <= iw and y + h <= ih:
                    box_vals = (x, y, w, h)  # in bounds: keep exact values
                else:
                    x2, y2 = min(x + w, iw), min(y + h, ih)
                    x, y = max(x, 0.0), max(y, 0.0)
                    if x2 <= x or y2 <= y:
                        raise ManifestError(path, line_no,
                                            "annotation entirely outside the image")
                    box_vals = (x, y, x2 - x, y2 - y)
                try:
                    current.annotations.append(
                        Annotation(box=BoundingBox(*box_vals),
                                   ignore=ignore, occlusion=occ))
                except ValueError as e:
                    raise ManifestError(path, line_no, str(e)) from None
            else:
                raise ManifestError(path, line_no, f"unknown directive {kind!r}")
    factor = subsample if subsample is not None else manifest_subsample
    if factor is not None:
        if factor < 1:
            raise ManifestError(path, 0, f"subsample factor must be >= 1, got {factor}")
        entries = entries[::factor]
    return Corpus(entries=entries, id=corpus_id, split=split)


def save_corpus(corpus: Corpus, path: str | os.PathLike, header_comments=()) -> None:
    """Write a manifest with image paths relative to the manifest directory."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        fh.write(f"corpus {corpus.id} {corpus.split}\n")
        for e in corpus.entries:
            rel = os.path.relpath(e.image_path, path.parent)
            fh.write(f"image {rel}\n")
            for a in e.annotations:
                b = a.box
                fh.write(f"anno {b.x!r} {b.y!r} {b.w!r} {b.h!r} {a.occlusion!r} {int(a.ignore)}\n")


def _window_for_object(box: BoundingBox, window: tuple[int, int],
                       object_frac: tuple[float, float]) -> BoundingBox:
    """Model window (source coords) wrapping an object box, height-anchored."""
    win_w, win_h = window
    src_h = box.h / object_frac[1]
    src_w = src_h * (win_w / win_h)
    cx = box.x + box.w / 2.0
    cy = box.y + box.h / 2.0
    return BoundingBox(cx - src_w / 2.0, cy - src_h / 2.0, src_w, src_h)


def _object_for_window(win: BoundingBox, window: tuple[int, int],
                       object_frac: tuple[float, float]) -> BoundingBox:
    obj_w = win.w * object_frac[0]
    obj_h = win.h * object_frac[1]
    return BoundingBox(win.x + (win.w - obj_w) / 2.0, win.y + (win.h - obj_h) / 2.0,
                       obj_w, obj_h)


def sample_positives(corpus: Corpus, window: tuple[int, int] = (60, 120),
                     object_frac: tuple[float, float] = (0.5, 1.0),
                     jitter: str = "none", pad_frac: float = 0.25) -> list[WindowSample]:
    """One resized window per non-ignore annotation; 'mirror' jitter doubles it.

    Annotations whose window would overflow the image by more than
    ``pad_frac`` of the window size on any side are skipped (and logged);
    smaller overflows are mirror-padded.
    """
    if jitter not in ("none", "mirror"):
        raise ValueError(f"unknown jitter {jitter!r}")
    win_w, win_h = window
    out: list[WindowSample] = []
    skipped = 0
    for entry in corpus.entries:
        img = None
        for anno in entry.annotations:
            if anno.ignore:
                continue
            win = _window_for_object(anno.box, window, object_frac)
            if img is None:
                img = entry.load_image()
            ih, iw = img.shape[:2]
            over_l = max(0.0, -win.x)
            over_t = max(0.0, -win.y)
            over_r = max(0.0, win.x + win.w - iw)
            over_b = max(0.0, win.y + win.h - ih)
            if max(over_l, over_r) > pad_frac * win.w or max(over_t, over_b) > pad_frac * win.h:
                skipped += 1
                continue
            crop = sample_window(img, win.x, win.y, win.w, win.h, win_h, win_w)
            out.append(WindowSample(entry.image_id, win, "positive", crop))
            if jitter == "mirror":
                out.append(WindowSample(entry.image_id, win, "positive",
                                        np.ascontiguousarray(crop[:, ::-1]), flipped=True))
    if skipped:
        log.info("sample_positives: skipped %d annotations too close to the border", skipped)
    return out


def sample_negatives(corpus: Corpus, n: int, seed: int, exclusion_iou: float = 0.1,
                     window: tuple[int, int] = (60, 120),
                     object_frac: tuple[float, float] = (0.5, 1.0),
                     height_range: tuple[float, float] | None = None,
                     max_attempts_factor: int = 100) -> list[WindowSample]:
    """n windows uniform over (image, object height, position), avoiding annotations.

    A proposal is rejected when its object box has IoU > ``exclusion_iou``
    with any annotation. Returns fewer than n (logged) if the attempt budget
    runs out. Deterministic for a fixed seed.
    """
    if n == 0:
        return []
    if not corpus.entries:
        raise ValueError("corpus has no images")
    rng = derive_rng(seed, "negative-windows")
    win_w, win_h = window
    if height_range is None:
        height_range = (0.5 * win_h, 1.5 * win_h)
    out: list[WindowSample] = []
    images: dict[int, np.ndarray] = {}
    attempts = 0
    budget = max_attempts_factor * n
    while len(out) < n and attempts < budget:
        attempts += 1
        ei = int(rng.integers(0, len(corpus.entries)))
        entry = corpus.entries[ei]
        if ei not in images:
            images[ei] = entry.load_image()
        img = images[ei]
        ih, iw = img.shape[:2]
        h_lo, h_hi = height_range
        h_hi = min(h_hi, ih * float(object_frac[1]))
        if h_hi < h_lo:
            continue
        obj_h = float(rng.uniform(h_lo, h_hi))
        src_h = obj_h / object_frac[1]
        src_w = src_h * (win_w / win_h)
        if src_w > iw or src_h > ih:
            continue
        x = float(rng.uniform(0.0, iw - src_w))
        y = float(rng.uniform(0.0, ih - src_h))
        win = BoundingBox(x, y, src_w, src_h)
        obj = _object_for_window(win, window, object_frac)
        if any(obj.iou(a.box) > exclusion_iou for a in entry.annotations):
            continue
        crop = sample_window(img, win.x, win.y, win.w, win.h, win_h, win_w)
        out.append(WindowSample(entry.image_id, win, "negative", crop))
    if len(out) < n:
        log.warning("sample_negatives: produced %d of %d requested windows", len(out), n)
    return out


def extract_patches(corpus: Corpus, n: int, patch_px: int = 10, origin: str = "all",
                    seed: int = 0, channel_opts: ChannelOptions = ChannelOptions(),
                    max_attempts_factor: int = 200) -> np.ndarray:
    """Per-channel 10x10 patch sets, shape (10, n, patch_px, patch_px).

    One sampled location yields a patch from each of the 10 channel planes.
    origin="foreground" restricts patches to annotation boxes (error when the
    corpus has none), "background" to their complement, "all" anywhere.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if origin not in ("all", "foreground", "background"):
        raise ValueError(f"unknown patch origin {origin!r}")
    if not corpus.entries:
        raise ValueError("corpus has no images")
    if origin == "foreground":
        usable = [e for e in corpus.entries
                  if any(not a.ignore and a.box.w >= patch_px and a.box.h >= patch_px
                         for a in e.annotations)]
        if not usable:
            raise ValueError("origin='foreground' but the corpus has no usable annotations")
    rng = derive_rng(seed, f"patches-{origin}")
    stacks: dict[int, np.ndarray] = {}
    out = np.empty((10, n, patch_px, patch_px), dtype=np.float32)
    got = 0
    attempts = 0
    budget = max_attempts_factor * n
    while got < n:
        attempts += 1
        if attempts > budget:
            raise ValueError(
                f"could not sample {n} {origin} patches within {budget} attempts")
        ei = int(rng.integers(0, len(corpus.entries)))
        entry = corpus.entries[ei]
        if ei not in stacks:
            stacks[ei] = compute_channels(entry.load_image(), channel_opts)
        stack = stacks[ei]
        ih, iw = stack.shape[1:]
        if ih < patch_px or iw < patch_px:
            continue
        if origin == "foreground":
            boxes = [a.box for a in entry.annotations
                     if not a.ignore and a.box.w >= patch_px and a.box.h >= patch_px]
            if not boxes:
                continue
            b = boxes[int(rng.integers(0, len(boxes)))]
            x_lo, x_hi = int(np.ceil(b.x)), int(np.floor(b.x + b.w)) - patch_px
            y_lo, y_hi = int(np.ceil(b.y)), int(np.floor(b.y + b.h)) - patch_px
            if x_hi < x_lo or y_hi < y_lo:
                continue
            x = int(rng.integers(x_lo, x_hi + 1))
            y = int(rng.integers(y_lo, y_hi + 1))
        else:
            x = int(rng.integers(0, iw - patch_px + 1))
            y = int(rng.integers(0, ih - patch_px + 1))
            if origin == "background":
                patch_box = BoundingBox(x, y, patch_px, patch_px)
                if any(patch_box.intersection(a.box) > 0 for a in entry.annotations):
                    continue
        out[:, got] = stack[:, y:y + patch_px, x:x + patch_px]
        got += 1
    return out


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic corpus renderer."""

    n_images: int
    image_size: tuple[int, int] = (320, 240)  # (width, height)
    targets_per_image: tuple[int, int] = (1, 3)
    height_range: tuple[float, float] = (72.0, 120.0)
    distractors_per_image: tuple[int, int] = (6, 12)
    occlusion_prob: float = 0.1
    noise_sigma: float = 0.04
    corpus_id: str = "synth"

    def __post_init__(self):
        if self.n_images < 0:
            raise ValueError("n_images must be >= 0")
        if self.height_range[0] <= 0 or self.height_range[1] < self.height_range[0]:
            raise ValueError("invalid height_range")


# clothes-like palette; targets and distractors draw from the same colours so
# that colour alone cannot separate them
_PALETTE = np.array([
    (0.15, 0.20, 0.45), (0.45, 0.12, 0.12), (0.16, 0.35, 0.18),
    (0.35, 0.30, 0.25), (0.25, 0.25, 0.28), (0.55, 0.45, 0.15),
    (0.40, 0.20, 0.40), (0.10, 0.35, 0.40),
])
_SKIN = np.array((0.87, 0.72, 0.58))


def _draw_rect(img, x0, y0, x1, y1, color):
    h, w = img.shape[:2]
    x0, y0 = max(int(round(x0)), 0), max(int(round(y0)), 0)
    x1, y1 = min(int(round(x1)), w), min(int(round(y1)), h)
    if x1 > x0 and y1 > y0:
        img[y0:y1, x0:x1] = color


def _draw_disc(img, cx, cy, r, color):
    h, w = img.shape[:2]
    x0, x1 = max(int(cx - r - 1), 0), min(int(cx + r + 2), w)
    y0, y1 = max(int(cy - r - 1), 0), min(int(cy + r + 2), h)
    if x1 <= x0 or y1 <= y0:
        return
    yy, xx = np.mgrid[y0:y1, x0:x1]
    mask = (xx + 0.5 - cx) ** 2 + (yy + 0.5 - cy) ** 2 <= r * r
    img[y0:y1, x0:x1][mask] = color


def _draw_rounded_rect(img, x0, y0, x1, y1, radius, color):
    h, w = img.shape[:2]
    ix0, ix1 = max(int(np.floor(x0)), 0), min(int(np.ceil(x1)), w)
    iy0, iy1 = max(int(np.floor(y0)), 0), min(int(np.ceil(y1)), h)
    if ix1 <= ix0 or iy1 <= iy0:
        return
    radius = min(radius, (x1 - x0) / 2.0, (y1 - y0) / 2.0)
    yy, xx = np.mgrid[iy0:iy1, ix0:ix1]
    px = xx + 0.5
    py = yy + 0.5
    # distance from the radius-inset core rectangle
    dx = np.maximum(np.maximum(x0 + radius - px, px - (x1 - radius)), 0.0)
    dy = np.maximum(np.maximum(y0 + radius - py, py - (y1 - radius)), 0.0)
    mask = dx * dx + dy * dy <= radius * radius
    img[iy0:iy1, ix0:ix1][mask] = color


def _render_target(img, rng, box: BoundingBox):
    x, y, w, h = box.x, box.y, box.w, box.h
    torso = _PALETTE[int(rng.integers(0, len(_PALETTE)))] + rng.normal(0, 0.03, 3)
    head = _SKIN + rng.normal(0, 0.03, 3)
    torso = np.clip(torso, 0.02, 0.98)
    head = np.clip(head, 0.02, 0.98)
    _draw_rounded_rect(img, x, y + 0.18 * h, x + w, y + h, 0.22 * w, torso)
    _draw_disc(img, x + w / 2.0, y + 0.09 * h, 0.09 * h, head)
    # local texture so gradient channels see more than the silhouette
    x0, y0 = int(max(x, 0)), int(max(y, 0))
    x1 = int(min(x + w, img.shape[1]))
    y1 = int(min(y + h, img.shape[0]))
    if x1 > x0 and y1 > y0:
        img[y0:y1, x0:x1] += rng.normal(0.0, 0.02, (y1 - y0, x1 - x0, 1)).astype(np.float32)


def _propose_distractor(rng, iw, ih):
    kind = ("hbar", "box", "disc", "pole", "blob")[int(rng.integers(0, 5))]
    color = _PALETTE[int(rng.integers(0, len(_PALETTE)))] + rng.normal(0, 0.05, 3)
    color = np.clip(color, 0.02, 0.98)
    if kind == "hbar":
        w = rng.uniform(0.2, 0.5) * iw
        h = rng.uniform(5, 18)
    elif kind == "box":
        w = rng.uniform(20, 70)
        h = w * rng.uniform(0.7, 1.4)
    elif kind == "pole":
        h = rng.uniform(60, 160)
        w = rng.uniform(4, 12)
    elif kind == "blob":
        h = rng.uniform(30, 90)
        w = h * rng.uniform(0.35, 0.55)  # pedestrian-like aspect, no structure
    else:
        r = rng.uniform(8, 26)
        w = h = 2 * r
    x = rng.uniform(0, max(iw - w, 1))
    y = rng.uniform(0, max(ih - h, 1))
    return kind, color, BoundingBox(x, y, max(w, 1.0), max(h, 1.0))


def _render_image(spec: SynthSpec, rng) -> tuple[np.ndarray, np.ndarray, list[Annotation]]:
    """One synthetic frame; returns (image, pre-target background, annotations)."""
    iw, ih = spec.image_size
    grid = rng.uniform(0.25, 0.8, size=(5, 6, 3))
    img = resize_bilinear(grid, ih, iw).astype(np.float32)

    lo_t, hi_t = spec.targets_per_image
    n_targets = int(rng.integers(lo_t, hi_t + 1))
    boxes: list[BoundingBox] = []
    for _ in range(n_targets):
        placed = None
        for _ in range(50):
            h = float(rng.uniform(*spec.height_range))
            w = 0.42 * h
            win_w = 0.5 * h  # window footprint must stay inside the image
            if win_w >= iw or h >= ih:
                continue
            cx = float(rng.uniform(win_w / 2.0, iw - win_w / 2.0))
            y = float(rng.uniform(0.0, ih - h))
            cand = BoundingBox(cx - w / 2.0, y, w, h)
            if all(cand.iou(b) <= 0.05 for b in boxes):
                placed = cand
                break
        if placed is not None:
            boxes.append(placed)
    if len(boxes) < n_targets:
        log.info("synthetic: placed %d of %d targets", len(boxes), n_targets)

    lo_d, hi_d = spec.distractors_per_image
    n_distract = int(rng.integers(lo_d, hi_d + 1))
    for _ in range(n_distract):
        for _ in range(20):
            kind, color, bbox = _propose_distractor(rng, iw, ih)
            if all(bbox.iou(b) <= 0.05 for b in boxes):
                if kind == "disc":
                    _draw_disc(img, bbox.x + bbox.w / 2, bbox.y + bbox.h / 2,
                               bbox.w / 2, color)
                elif kind == "blob":
                    _draw_rounded_rect(img, bbox.x, bbox.y, bbox.x + bbox.w,
                                       bbox.y + bbox.h, 0.2 * bbox.w, color)
                else:
                    _draw_rect(img, bbox.x, bbox.y, bbox.x + bbox.w, bbox.y + bbox.h, color)
                break

    background = img.copy()

    annos: list[Annotation] = []
    for box in boxes:
        _render_target(img, rng, box)
        occ = 0.0
        if rng.uniform() < spec.occlusion_prob:
            occ = float(rng.uniform(0.2, 0.55))
            occ_color = np.clip(rng.uniform(0.2, 0.8, 3), 0, 1)
            if rng.uniform() < 0.5:  # occlude from the bottom
                _draw_rect(img, box.x - 2, box.y + box.h * (1 - occ), box.x + box.w + 2,
                           box.y + box.h + 2, occ_color)
            else:  # occlude one side
                _draw_rect(img, box.x + box.w * (1 - occ), box.y - 2, box.x + box.w + 2,
                           box.y + box.h + 2, occ_color)
        annos.append(Annotation(box=box, ignore=False, occlusion=occ))

    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, img.shape).astype(np.float32)
    img = np.clip(img, 0.0, 1.0)
    return img, background, annos


def make_synthetic(spec: SynthSpec, seed: int, out_dir: str | os.PathLike) -> Corpus:
    """Render a synthetic corpus to ``out_dir`` (PNG files plus manifest)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: list[CorpusEntry] = []
    for i in range(spec.n_images):
        rng = derive_rng(seed, "synthetic-image", i)
        img, _, annos = _render_image(spec, rng)
        name = f"{spec.corpus_id}_{i:04d}.png"
        save_image(img, out_dir / name)
        entries.append(CorpusEntry(image_path=str(out_dir / name), annotations=annos,
                                   image_id=name))
    corpus = Corpus(entries=entries, id=spec.corpus_id, split="train")
    save_corpus(corpus, out_dir / "manifest.txt")
    return corpus
