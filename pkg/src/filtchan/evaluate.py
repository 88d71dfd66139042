"""Detection evaluation: greedy matching, log-average miss rate, average precision.

Matching is greedy per image over detections sorted by descending score: each
detection takes the unmatched non-ignore annotation of highest IoU if that
IoU reaches the threshold (0.5 by default). Failing that it may fall into an
ignore region, judged by intersection-over-detection-area, and is then
excluded from both true and false positives. A non-ignore annotation matches
at most one detection; ignore regions may absorb any number.

The miss-rate summary sweeps all detection scores, computes (FPPI, miss rate)
per threshold and averages the lowest miss rate at or below each of nine
log-spaced FPPI reference points 10^-2 .. 10^0, in log space. Average
precision interpolates precision (max over recall >= r) at equally spaced
recall points (41 by default, 11 optional).
"""

from __future__ import annotations

import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, replace

import numpy as np

from .detector import BoundingBox, Detection

FPPI_REFS = 10.0 ** np.linspace(-2.0, 0.0, 9)
MISS_RATE_FLOOR = 1e-10

# detection status codes
TP, FP, IGNORED = 1, 0, -1


@dataclass(frozen=True)
class Annotation:
    box: BoundingBox
    ignore: bool = False
    occlusion: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.occlusion <= 1.0:
            raise ValueError(f"occlusion must be in [0, 1], got {self.occlusion}")

    @property
    def height(self) -> float:
        return self.box.h


@dataclass
class MatchResult:
    """Per-image matching outcome (inputs to the metric sweeps)."""

    det_scores: np.ndarray  # (nd,) float64, descending
    det_status: np.ndarray  # (nd,) int8: 1 TP, 0 FP, -1 ignored
    anno_matched: np.ndarray  # (na,) bool over non-ignore annotations
    n_annotations: int  # number of non-ignore annotations


@dataclass
class EvalCurve:
    points: np.ndarray  # (n, 2): (fppi, miss_rate) or (recall, precision)
    summary: float
    protocol: str  # "caltech-mr" | "kitti-ap"

    def __eq__(self, other):
        if not isinstance(other, EvalCurve):
            return NotImplemented
        return (self.protocol == other.protocol
                and self.summary == other.summary
                and self.points.shape == other.points.shape
                and bool(np.all(self.points == other.points)))


def match(dets: list[Detection], annos: list[Annotation], iou_min: float = 0.5) -> MatchResult:
    """Greedily match one image's detections against its annotations."""
    scores = np.array([d.score for d in dets], dtype=np.float64)
    if scores.size > 1 and np.any(np.diff(scores) > 0):
        raise ValueError("detections must be sorted by descending score")
    real = [a for a in annos if not a.ignore]
    ignores = [a for a in annos if a.ignore]
    matched = np.zeros(len(real), dtype=bool)
    status = np.empty(len(dets), dtype=np.int8)
    for di, det in enumerate(dets):
        best_iou, best_ai = 0.0, -1
        for ai, anno in enumerate(real):
            if matched[ai]:
                continue
            iou = det.box.iou(anno.box)
            if iou > best_iou:
                best_iou, best_ai = iou, ai
        if best_ai >= 0 and best_iou >= iou_min:
            matched[best_ai] = True
            status[di] = TP
            continue
        in_ignore = any(
            det.box.intersection(a.box) / det.box.area >= iou_min for a in ignores
        )
        status[di] = IGNORED if in_ignore else FP
    return MatchResult(det_scores=scores, det_status=status,
                       anno_matched=matched, n_annotations=len(real))


def _pooled_sweep(results: list[MatchResult]):
    """Pooled (scores, is_tp) over all images, ignored detections dropped,
    sorted by descending score (stable)."""
    scores, is_tp = [], []
    for r in results:
        keep = r.det_status != IGNORED
        scores.append(r.det_scores[keep])
        is_tp.append(r.det_status[keep] == TP)
    scores = np.concatenate(scores) if scores else np.empty(0)
    is_tp = np.concatenate(is_tp) if is_tp else np.empty(0, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    return scores[order], is_tp[order]


def log_avg_miss_rate(results: list[MatchResult]) -> EvalCurve:
    """Caltech-style log-average miss rate over the FPPI range [1e-2, 1]."""
    n_images = len(results)
    n_pos = sum(r.n_annotations for r in results)
    if n_pos < 1:
        raise ValueError("need at least one non-ignored annotation")
    scores, is_tp = _pooled_sweep(results)
    cum_tp = np.cumsum(is_tp)
    cum_fp = np.cumsum(~is_tp)
    if scores.size:
        # one sample per distinct threshold: the last pooled index at each score
        last = np.flatnonzero(np.diff(scores) != 0)
        take = np.concatenate([last, [scores.size - 1]])
        fppi = cum_fp[take] / n_images
        miss = 1.0 - cum_tp[take] / n_pos
    else:
        fppi = np.empty(0)
        miss = np.empty(0)
    ref_misses = np.empty(len(FPPI_REFS))
    for i, ref in enumerate(FPPI_REFS):
        ok = fppi <= ref
        ref_misses[i] = miss[ok].min() if ok.any() else 1.0
    if np.all(ref_misses == 0.0):
        summary = 0.0
    else:
        summary = float(np.exp(np.mean(np.log(np.maximum(ref_misses, MISS_RATE_FLOOR)))))
    points = np.stack([fppi, miss], axis=1) if fppi.size else np.empty((0, 2))
    return EvalCurve(points=points, summary=summary, protocol="caltech-mr")


def average_precision(results: list[MatchResult], recall_points: int = 41) -> EvalCurve:
    """Interpolated average precision at equally spaced recall points."""
    if recall_points < 2:
        raise ValueError("recall_points must be >= 2")
    n_pos = sum(r.n_annotations for r in results)
    if n_pos < 1:
        raise ValueError("need at least one non-ignored annotation")
    scores, is_tp = _pooled_sweep(results)
    cum_tp = np.cumsum(is_tp)
    precision = cum_tp / np.arange(1, scores.size + 1) if scores.size else np.empty(0)
    recall = cum_tp / n_pos if scores.size else np.empty(0)
    refs = np.linspace(0.0, 1.0, recall_points)
    interp = np.empty(recall_points)
    for i, r in enumerate(refs):
        ok = recall >= r
        interp[i] = precision[ok].max() if ok.any() else 0.0
    summary = float(interp.mean())
    points = np.stack([recall, precision], axis=1) if scores.size else np.empty((0, 2))
    return EvalCurve(points=points, summary=summary, protocol="kitti-ap")


SUBSET_DEFAULTS = {
    "reasonable": (50.0, 0.35),  # Caltech-style: height >= 50 px, occlusion <= 0.35
    "moderate": (25.0, 0.5),  # KITTI-style: height >= 25 px, partial occlusion
}


def apply_subset(annos: list[Annotation], subset: str = "reasonable",
                 min_height: float | None = None,
                 max_occlusion: float | None = None) -> list[Annotation]:
    """Copy of the annotations with ignore flags set by the evaluation subset.

    Already-ignored annotations stay ignored. "custom" uses the explicit
    thresholds; the named subsets have the documented defaults, individually
    overridable.
    """
    if subset == "custom":
        if min_height is None or max_occlusion is None:
            raise ValueError("custom subset needs min_height and max_occlusion")
        mh, mo = min_height, max_occlusion
    else:
        if subset not in SUBSET_DEFAULTS:
            raise ValueError(f"unknown subset {subset!r}")
        mh, mo = SUBSET_DEFAULTS[subset]
        mh = mh if min_height is None else min_height
        mo = mo if max_occlusion is None else max_occlusion
    out = []
    for a in annos:
        keep = a.height >= mh and a.occlusion <= mo
        out.append(replace(a, ignore=a.ignore or not keep))
    return out


def _column_names(protocol: str) -> tuple[str, str]:
    return ("fppi", "miss_rate") if protocol == "caltech-mr" else ("recall", "precision")


def export_curve(curve: EvalCurve, path: str | os.PathLike, format: str = "csv",
                 header_comments=()) -> None:
    if format == "csv":
        cols = _column_names(curve.protocol)
        with open(path, "w", encoding="utf-8") as fh:
            for line in header_comments:
                fh.write(f"# {line}\n")
            fh.write(f"# filtchan-curve v1 {curve.protocol} summary {curve.summary!r}\n")
            fh.write(f"{cols[0]},{cols[1]}\n")
            for a, b in curve.points:
                fh.write(f"{float(a)!r},{float(b)!r}\n")
    elif format == "svg":
        _write_svg(curve, path)
    else:
        raise ValueError(f"unknown curve format {format!r}")


def read_curve(path: str | os.PathLike) -> EvalCurve:
    protocol, summary, rows = None, None, []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# filtchan-curve v1 "):
                parts = line.split()
                protocol, summary = parts[3], float(parts[5])
            elif not line or line.startswith("#") or "," not in line:
                continue
            else:
                a, b = line.split(",")
                try:
                    rows.append((float(a), float(b)))
                except ValueError:
                    continue  # the header row
    if protocol is None:
        raise ValueError(f"{path}: missing filtchan-curve header")
    points = np.array(rows) if rows else np.empty((0, 2))
    return EvalCurve(points=points, summary=summary, protocol=protocol)


def _write_svg(curve: EvalCurve, path: str | os.PathLike,
               width: int = 480, height: int = 360) -> None:
    """Minimal standalone SVG plot: log-x miss-rate curve or linear PR curve."""
    margin = 50
    pw, ph = width - 2 * margin, height - 2 * margin
    is_mr = curve.protocol == "caltech-mr"
    xlab, ylab = _column_names(curve.protocol)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     width=str(width), height=str(height))
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height),
                  fill="white")

    def sx(x):
        if is_mr:
            lo, hi = -2.0, 0.0
            v = np.log10(max(x, 1e-4))
        else:
            lo, hi = 0.0, 1.0
            v = x
        return margin + (min(max(v, lo), hi) - lo) / (hi - lo) * pw

    def sy(y):
        return margin + ph - min(max(y, 0.0), 1.0) * ph

    ET.SubElement(svg, "rect", x=str(margin), y=str(margin), width=str(pw),
                  height=str(ph), fill="none", stroke="black")
    xticks = [0.01, 0.1, 1.0] if is_mr else [0.0, 0.25, 0.5, 0.75, 1.0]
    for t in xticks:
        x = sx(t)
        ET.SubElement(svg, "line", x1=str(x), y1=str(margin + ph), x2=str(x),
                      y2=str(margin + ph + 4), stroke="black")
        lbl = ET.SubElement(svg, "text", x=str(x), y=str(margin + ph + 18),
                            **{"text-anchor": "middle", "font-size": "10"})
        lbl.text = f"{t:g}"
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(t)
        ET.SubElement(svg, "line", x1=str(margin - 4), y1=str(y), x2=str(margin),
                      y2=str(y), stroke="black")
        lbl = ET.SubElement(svg, "text", x=str(margin - 8), y=str(y + 3),
                            **{"text-anchor": "end", "font-size": "10"})
        lbl.text = f"{t:g}"
    if len(curve.points):
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in curve.points)
        ET.SubElement(svg, "polyline", points=pts, fill="none", stroke="#c02020",
                      **{"stroke-width": "1.5"})
    metric = "log-avg MR" if is_mr else "AP"
    legend = ET.SubElement(svg, "text", x=str(margin + 8), y=str(margin + 16),
                           **{"font-size": "12"})
    legend.text = f"{metric} = {curve.summary:.4f}"
    xt = ET.SubElement(svg, "text", x=str(margin + pw / 2), y=str(height - 8),
                       **{"text-anchor": "middle", "font-size": "11"})
    xt.text = xlab
    yt = ET.SubElement(svg, "text", x="14", y=str(margin + ph / 2),
                       **{"text-anchor": "middle", "font-size": "11",
                          "transform": f"rotate(-90 14 {margin + ph / 2})"})
    yt.text = ylab
    ET.ElementTree(svg).write(path, encoding="unicode", xml_declaration=True)
