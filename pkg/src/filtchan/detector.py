"""Multi-scale sliding-window detection and greedy non-maximum suppression.

The image pyramid resizes the input (bilinear) so that objects of each target
height map onto the model window's object region; channels and filter
responses are recomputed per scale (exact pyramid, no channel approximation).
Every stride-aligned window is scored; boxes are mapped back to original
image coordinates through the object-in-window geometry (the object occupies
a centred subregion of the padded model window, by default half the window
width and its full height).

NMS is greedy over descending scores with overlap measured as
intersection / min(area1, area2); a detection is suppressed when overlap
with any kept detection exceeds the limit (0.65 by default).
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channels import ChannelOptions, compute_channels
from .featuremap import apply_bank
from .forest import BoostedForest, score_map
from .imgutil import resize_bilinear

WORKERS_ENV = "FILTCHAN_WORKERS"


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def intersection(self, other: "BoundingBox") -> float:
        iw = min(self.x + self.w, other.x + other.w) - max(self.x, other.x)
        ih = min(self.y + self.h, other.y + other.h) - max(self.y, other.y)
        if iw <= 0 or ih <= 0:
            return 0.0
        return iw * ih

    def iou(self, other: "BoundingBox") -> float:
        inter = self.intersection(other)
        if inter == 0.0:
            return 0.0
        return inter / (self.area + other.area - inter)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    score: float
    scale: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"non-finite detection score {self.score}")


@dataclass(frozen=True)
class PyramidSpec:
    """Scale-space layout and object-in-window geometry.

    Window is (width, height) in pixels; the object occupies a centred
    subregion of ``object_frac`` = (width fraction, height fraction).
    Consecutive pyramid scales differ by 2**(-1/scales_per_octave).
    """

    min_height: float = 50.0
    max_height: float = 400.0
    scales_per_octave: int = 8
    window: tuple[int, int] = (60, 120)
    object_frac: tuple[float, float] = (0.5, 1.0)

    def __post_init__(self):
        if self.min_height <= 0 or self.max_height < self.min_height:
            raise ValueError("need 0 < min_height <= max_height")
        if self.scales_per_octave < 1:
            raise ValueError("scales_per_octave must be >= 1")

    @property
    def object_size(self) -> tuple[float, float]:
        """Object (width, height) in window pixels."""
        return self.window[0] * self.object_frac[0], self.window[1] * self.object_frac[1]

    def object_offset(self) -> tuple[float, float]:
        """Offset of the object region's top-left inside the window."""
        ow, oh = self.object_size
        return (self.window[0] - ow) / 2.0, (self.window[1] - oh) / 2.0


def pyramid_scales(spec: PyramidSpec) -> list[float]:
    """Resize factors covering object heights [min_height, max_height]."""
    _, obj_h = spec.object_size
    f_max = obj_h / spec.min_height
    f_min = obj_h / spec.max_height
    ratio = 2.0 ** (-1.0 / spec.scales_per_octave)
    n_steps = int(np.ceil(np.log(f_min / f_max) / np.log(ratio) - 1e-9))
    return [f_max * ratio ** k for k in range(max(n_steps, 0) + 1)]


def detect(img: np.ndarray, forest: BoostedForest, spec: PyramidSpec | None = None,
           stride: int = 6, score_min: float = 0.0,
           channel_opts: ChannelOptions = ChannelOptions()) -> list[Detection]:
    """All window scores >= score_min over the pyramid, as detections.

    Output boxes are object boxes in original image coordinates, sorted by
    descending score with ties broken by (scale, window y, window x). Images
    too small for the window at every scale yield an empty list. NMS is a
    separate step (:func:`nms`).
    """
    if forest.bank is None or forest.window is None:
        raise ValueError("forest needs a bank and window geometry")
    if spec is None:
        spec = PyramidSpec(window=forest.window)
    if spec.window != forest.window:
        raise ValueError(f"pyramid window {spec.window} != model window {forest.window}")
    es = forest.bank.eval_stride_px
    if stride % es:
        raise ValueError(f"detection stride {stride} not a multiple of eval stride {es}")
    step = stride // es
    win_w, win_h = forest.window
    off_x, off_y = spec.object_offset()
    obj_w, obj_h = spec.object_size
    img = np.asarray(img, dtype=np.float32)

    raw: list[tuple[float, float, int, int, Detection]] = []
    for s in pyramid_scales(spec):
        rh = int(round(img.shape[0] * s))
        rw = int(round(img.shape[1] * s))
        if rh < win_h or rw < win_w or rh < 3 or rw < 3:
            continue
        resized = resize_bilinear(img, rh, rw) if s != 1.0 else img
        stack = compute_channels(resized, channel_opts)
        resp = apply_bank(stack, forest.bank, image_id="", scale=s)
        smap = score_map(forest, resp, step=step)
        ys, xs = np.nonzero(smap >= score_min)
        for wy, wx in zip(ys.tolist(), xs.tolist()):
            px = wx * step * es
            py = wy * step * es
            box = BoundingBox((px + off_x) / s, (py + off_y) / s, obj_w / s, obj_h / s)
            det = Detection(box=box, score=float(smap[wy, wx]), scale=s)
            raw.append((-det.score, s, py, px, det))
    raw.sort(key=lambda t: t[:4])
    return [t[4] for t in raw]


def overlap_min_area(a: BoundingBox, b: BoundingBox) -> float:
    inter = a.intersection(b)
    if inter == 0.0:
        return 0.0
    return inter / min(a.area, b.area)


def nms(dets: list[Detection], overlap_max: float = 0.65) -> list[Detection]:
    """Greedy suppression: keep by descending score (stable on ties), drop any
    detection whose min-area overlap with a kept one exceeds ``overlap_max``."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    kept: list[int] = []
    for i in order:
        if all(overlap_min_area(dets[i].box, dets[k].box) <= overlap_max for k in kept):
            kept.append(i)
    return [dets[i] for i in kept]


def write_detections(dets_by_image: dict[str, list[Detection]],
                     path: str | os.PathLike, header_comments=()) -> None:
    """One detection per line: image id, x, y, w, h, score (6 significant digits)."""
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        for image_id in sorted(dets_by_image):
            for d in dets_by_image[image_id]:
                b = d.box
                fh.write(f"{image_id} {b.x:.6g} {b.y:.6g} {b.w:.6g} {b.h:.6g} {d.score:.6g}\n")


def read_detections(path: str | os.PathLike) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}:{line_no}: expected 6 fields, got {len(parts)}")
            image_id = parts[0]
            x, y, w, h, score = (float(v) for v in parts[1:])
            out.setdefault(image_id, []).append(
                Detection(box=BoundingBox(x, y, w, h), score=score))
    return out


def _detect_one(args):
    image_id, img, forest, spec, stride, score_min, nms_overlap, channel_opts = args
    dets = detect(img, forest, spec, stride=stride, score_min=score_min,
                  channel_opts=channel_opts)
    if nms_overlap is not None:
        dets = nms(dets, nms_overlap)
    return image_id, dets


def resolve_workers(default: int = 1) -> int:
    value = os.environ.get(WORKERS_ENV, "")
    if value:
        return max(1, int(value))
    return default


def detect_images(images: list[tuple[str, np.ndarray]], forest: BoostedForest,
                  spec: PyramidSpec | None = None, stride: int = 6,
                  score_min: float = 0.0, nms_overlap: float | None = 0.65,
                  channel_opts: ChannelOptions = ChannelOptions(),
                  workers: int | None = None) -> dict[str, list[Detection]]:
    """Detection over (image_id, image) pairs, optionally in worker processes.

    Results are merged in input order, so worker count never changes output.
    """
    tasks = [(image_id, img, forest, spec, stride, score_min, nms_overlap, channel_opts)
             for image_id, img in images]
    workers = resolve_workers() if workers is None else workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_detect_one, tasks, chunksize=4))
    else:
        results = [_detect_one(t) for t in tasks]
    return dict(results)
