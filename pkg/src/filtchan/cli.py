"""Command-line front-end: filters, train, detect, eval, synth, stats.

Every command takes an optional --config JSON file; flags override file
values. All randomness flows from the single top-level seed. The resolved
configuration is echoed into output artifact headers, and outputs carry no
timestamps, so reruns on identical inputs are byte-identical. Worker count
for detection and mining comes from the FILTCHAN_WORKERS environment
variable (default 1).
"""

from __future__ import annotations

import argparse
import base64
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import detector as det_mod
from . import evaluate as eval_mod
from . import filterbank as fb
from . import forest as forest_mod
from . import training as train_mod
from .channels import ChannelOptions
from .config import ConfigError, RunConfig, load_config
from .featuremap import write_float_grid

CHANNEL_NAMES = ("L", "U", "V", "mag", "o0", "o1", "o2", "o3", "o4", "o5")


def _channel_opts(cfg: RunConfig) -> ChannelOptions:
    return ChannelOptions(pre_smooth=cfg.channels.pre_smooth)


def _pyramid(cfg: RunConfig) -> det_mod.PyramidSpec:
    d = cfg.detector
    return det_mod.PyramidSpec(min_height=d.min_height, max_height=d.max_height,
                               scales_per_octave=d.scales_per_octave,
                               window=tuple(d.window), object_frac=tuple(d.object_frac))


def _build_bank(cfg: RunConfig, corpus=None) -> fb.FilterBank:
    f = cfg.filterbank
    if f.bank_path:
        return fb.load_bank(f.bank_path)
    if f.family == "uniform":
        return fb.make_uniform(cell_px=f.cell_px)
    if f.family == "squares":
        return fb.make_squares(f.n_sizes, cell_px=f.cell_px)
    if f.family == "checkerboards":
        return fb.make_checkerboards(f.max_rows, f.max_cols, cell_px=f.cell_px)
    if f.family == "random":
        return fb.make_random(f.n_filters, f.max_rows, f.max_cols, seed=cfg.seed,
                              cell_px=f.cell_px)
    if f.family in ("pca-all-data", "pca-foreground"):
        if corpus is None:
            raise ConfigError(f"filterbank.family {f.family!r} needs a training corpus")
        opts = _channel_opts(cfg)
        if f.family == "pca-all-data":
            patches = data_mod.extract_patches(corpus, f.pca_patches, origin="all",
                                               seed=cfg.seed, channel_opts=opts)
            return fb.learn_pca(patches, k=f.pca_k, split="all-data")
        fg = data_mod.extract_patches(corpus, f.pca_patches, origin="foreground",
                                      seed=cfg.seed, channel_opts=opts)
        bg = data_mod.extract_patches(corpus, f.pca_patches, origin="background",
                                      seed=cfg.seed, channel_opts=opts)
        return fb.learn_pca((fg, bg), k=f.pca_k, split="foreground-background")
    raise ConfigError(f"filterbank.family: no generator for {f.family!r} "
                      "(informed banks must come from bank_path)")


def _load_corpus_arg(manifest: str, subsample=None) -> data_mod.Corpus:
    return data_mod.load_corpus(manifest, subsample=subsample)


def _parse_max(text: str) -> tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise ConfigError(f"--max expects ROWSxCOLS (e.g. 4x4), got {text!r}") from None


def cmd_filters(args, cfg: RunConfig) -> int:
    if args.action == "generate":
        if args.family:
            cfg.filterbank.family = args.family
        if args.max:
            cfg.filterbank.max_rows, cfg.filterbank.max_cols = _parse_max(args.max)
        if args.n is not None:
            cfg.filterbank.n_filters = args.n
        if args.sizes is not None:
            cfg.filterbank.n_sizes = args.sizes
        if args.cell_px is not None:
            cfg.filterbank.cell_px = args.cell_px
        bank = _build_bank(cfg)
        fb.save_bank(bank, args.output, header_comments=[cfg.echo()])
        print(f"{bank.family} filters {len(bank)} -> {args.output}")
        return 0

    if args.action == "learn":
        if args.family:
            cfg.filterbank.family = args.family
        if cfg.filterbank.family not in ("pca-all-data", "pca-foreground"):
            raise ConfigError("filters learn: family must be pca-all-data or pca-foreground")
        if args.k is not None:
            cfg.filterbank.pca_k = args.k
        if args.patches is not None:
            cfg.filterbank.pca_patches = args.patches
        corpus = _load_corpus_arg(args.manifest, cfg.data.subsample)
        bank = _build_bank(cfg, corpus=corpus)
        fb.save_bank(bank, args.output, header_comments=[cfg.echo()])
        print(f"{bank.family} filters {len(bank)} -> {args.output}")
        return 0

    if args.action == "inspect":
        bank = fb.load_bank(args.bank)
        print(f"family {bank.family} cell_px {bank.cell_px} stride {bank.eval_stride_px} "
              f"per_channel {int(bank.per_channel)} filters {len(bank)}")
        print(f"{'id':<20} {'rows':>4} {'cols':>4} {'sum':>10} channel")
        for f in bank.filters:
            chan = f.channel if f.channel is not None else "-"
            print(f"{f.id:<20} {f.rows:>4} {f.cols:>4} {f.weights.sum():>10.4g} {chan}")
        return 0

    if args.action == "reduce":
        model = forest_mod.load_model(args.model)
        reduced = forest_mod.reduce_bank(model, model.bank, args.n, mode=args.mode)
        fb.save_bank(reduced, args.output, header_comments=[cfg.echo()])
        print(f"reduced bank filters {len(reduced)} -> {args.output}")
        return 0

    raise ConfigError(f"unknown filters action {args.action!r}")


def cmd_synth(args, cfg: RunConfig) -> int:
    s = cfg.data.synth
    if args.images is not None:
        s.n_images = args.images
    spec = data_mod.SynthSpec(
        n_images=s.n_images, image_size=tuple(s.image_size),
        targets_per_image=tuple(s.targets_per_image),
        height_range=tuple(s.height_range),
        distractors_per_image=tuple(s.distractors_per_image),
        occlusion_prob=s.occlusion_prob, noise_sigma=s.noise_sigma,
        corpus_id=s.corpus_id)
    corpus = data_mod.make_synthetic(spec, cfg.seed, args.output)
    manifest = Path(args.output) / "manifest.txt"
    print(f"synth images {len(corpus)} manifest {manifest}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    if args.manifest:
        cfg.data.train_manifest = args.manifest
    if not cfg.data.train_manifest:
        raise ConfigError("train: no training manifest (data.train_manifest or --manifest)")
    if args.bank:
        cfg.filterbank.bank_path = args.bank
    corpus = _load_corpus_arg(cfg.data.train_manifest, cfg.data.subsample)
    bank = _build_bank(cfg, corpus=corpus)
    t = cfg.training
    mining = train_mod.MiningOptions(quota=t.negatives_per_round,
                                     score_min=t.mining_score_min,
                                     exclusion_iou=t.exclusion_iou,
                                     nms_overlap=cfg.detector.nms_overlap)
    forest = train_mod.train_staged(
        corpus, bank, list(t.schedule), mining,
        window=tuple(cfg.detector.window), object_frac=tuple(cfg.detector.object_frac),
        depth=t.depth, variant=t.variant, seed=cfg.seed,
        initial_negatives=t.initial_negatives,
        jitter="mirror" if t.mirror else "none",
        pyramid=_pyramid(cfg), stride=cfg.detector.stride,
        channel_opts=_channel_opts(cfg))
    forest_mod.save_model(forest, args.output, header_comments=[cfg.echo()])
    print(f"trained trees {len(forest.trees)} model {args.output}")
    return 0


def cmd_detect(args, cfg: RunConfig) -> int:
    if args.manifest:
        cfg.data.test_manifest = args.manifest
    if not cfg.data.test_manifest:
        raise ConfigError("detect: no manifest (data.test_manifest or --manifest)")
    if args.score_min is not None:
        cfg.detector.score_min = args.score_min
    forest = forest_mod.load_model(args.model)
    corpus = _load_corpus_arg(cfg.data.test_manifest, cfg.data.subsample)
    spec = det_mod.PyramidSpec(
        min_height=cfg.detector.min_height, max_height=cfg.detector.max_height,
        scales_per_octave=cfg.detector.scales_per_octave, window=forest.window,
        object_frac=tuple(cfg.detector.object_frac))
    images = [(e.image_id, e.load_image()) for e in corpus.entries]
    dets = det_mod.detect_images(images, forest, spec, stride=cfg.detector.stride,
                                 score_min=cfg.detector.score_min,
                                 nms_overlap=cfg.detector.nms_overlap,
                                 channel_opts=_channel_opts(cfg))
    det_mod.write_detections(dets, args.output, header_comments=[cfg.echo()])
    n = sum(len(v) for v in dets.values())
    print(f"detections {n} images {len(images)} -> {args.output}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    if args.manifest:
        cfg.data.test_manifest = args.manifest
    if not cfg.data.test_manifest:
        raise ConfigError("eval: no manifest (data.test_manifest or --manifest)")
    if args.protocol:
        cfg.eval.protocol = args.protocol
    corpus = _load_corpus_arg(cfg.data.test_manifest, cfg.data.subsample)
    dets_by_image = det_mod.read_detections(args.detections)
    results = []
    for entry in corpus.entries:
        annos = entry.annotations
        if cfg.eval.subset != "none":
            annos = eval_mod.apply_subset(annos, cfg.eval.subset,
                                          min_height=cfg.eval.min_height,
                                          max_occlusion=cfg.eval.max_occlusion)
        dets = sorted(dets_by_image.get(entry.image_id, []), key=lambda d: -d.score)
        results.append(eval_mod.match(dets, annos, iou_min=cfg.eval.iou_min))
    if cfg.eval.protocol == "caltech-mr":
        curve = eval_mod.log_avg_miss_rate(results)
        metric = "log-avg-miss-rate"
    else:
        curve = eval_mod.average_precision(results, recall_points=cfg.eval.recall_points)
        metric = "average-precision"
    if args.output:
        eval_mod.export_curve(curve, args.output, format="csv",
                              header_comments=[cfg.echo()])
    if args.svg:
        eval_mod.export_curve(curve, args.svg, format="svg")
    print(f"{curve.protocol} {metric} {curve.summary:.6g}")
    return 0


def _heatmap_svg(maps: np.ndarray, path, labels) -> None:
    """Grid of per-channel heatmaps as an SVG with embedded PNGs."""
    import xml.etree.ElementTree as ET

    from PIL import Image as PILImage

    n = maps.shape[0]
    cell_w = maps.shape[2] * 2
    cell_h = maps.shape[1] * 2
    pad = 18
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     width=str(n * (cell_w + pad) + pad), height=str(cell_h + 2 * pad))
    vmax = maps.max() or 1.0
    for i in range(n):
        norm = (maps[i] / vmax * 255.0).astype(np.uint8)
        rgb = np.stack([norm, np.zeros_like(norm), 255 - norm], axis=-1)
        buf = io.BytesIO()
        PILImage.fromarray(rgb, "RGB").resize((cell_w, cell_h), PILImage.NEAREST).save(
            buf, format="PNG")
        href = "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")
        x = pad + i * (cell_w + pad)
        ET.SubElement(svg, "image", x=str(x), y=str(pad), width=str(cell_w),
                      height=str(cell_h), href=href)
        lbl = ET.SubElement(svg, "text", x=str(x + cell_w // 2), y=str(pad - 5),
                            **{"text-anchor": "middle", "font-size": "10"})
        lbl.text = labels[i]
    ET.ElementTree(svg).write(path, encoding="unicode", xml_declaration=True)


def cmd_stats(args, cfg: RunConfig) -> int:
    forest = forest_mod.load_model(args.model)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = forest_mod.filter_usage(forest)
    with open(out_dir / "filter_usage.txt", "w", encoding="utf-8") as fh:
        fh.write(f"# {cfg.echo()}\n")
        fh.write(f"{'filter':<20} {'uses':>6}\n")
        order = sorted(range(len(counts)), key=lambda i: (-counts[i], i))
        for i in order:
            fh.write(f"{forest.bank.filters[i].id:<20} {counts[i]:>6}\n")
    maps, total = forest_mod.spatial_influence(forest)
    for c in range(maps.shape[0]):
        write_float_grid(maps[c], out_dir / f"influence_{CHANNEL_NAMES[c]}.pfg",
                         header_comments=[cfg.echo()])
    write_float_grid(total, out_dir / "influence_total.pfg", header_comments=[cfg.echo()])
    stacked = np.concatenate([maps, total[None]], axis=0)
    _heatmap_svg(stacked, out_dir / "influence.svg", list(CHANNEL_NAMES) + ["all"])
    print(f"split-nodes {int(counts.sum())} filters-used {int((counts > 0).sum())} "
          f"-> {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="filtchan",
        description="Filtered-channel-features detector: banks, training, "
                    "detection, evaluation, synthetic data, model introspection.")
    p.add_argument("--config", help="JSON run configuration (defaults reproduce the "
                                    "standard recipe; flags override)")
    sub = p.add_subparsers(dest="command", required=True)

    pf = sub.add_parser("filters", help="generate/learn/inspect/reduce filter banks")
    sf = pf.add_subparsers(dest="action", required=True)
    g = sf.add_parser("generate", help="generate a designed bank")
    g.add_argument("--family", choices=["uniform", "squares", "checkerboards", "random"])
    g.add_argument("--max", help="max cells ROWSxCOLS (checkerboards/random), default 4x4")
    g.add_argument("--n", type=int, help="filter count (random family), default 50")
    g.add_argument("--sizes", type=int, help="number of sizes (squares family), default 16")
    g.add_argument("--cell-px", type=int, dest="cell_px", help="cell side in px, default 6")
    g.add_argument("-o", "--output", required=True)
    l = sf.add_parser("learn", help="learn a PCA bank from corpus patches")
    l.add_argument("--family", choices=["pca-all-data", "pca-foreground"])
    l.add_argument("--manifest", required=True)
    l.add_argument("-k", type=int, help="filters per channel, default 4")
    l.add_argument("--patches", type=int, help="patches per channel, default 1200")
    l.add_argument("-o", "--output", required=True)
    i = sf.add_parser("inspect", help="print a bank summary table")
    i.add_argument("bank")
    r = sf.add_parser("reduce", help="keep a model's most-used filters")
    r.add_argument("--model", required=True)
    r.add_argument("-n", type=int, required=True)
    r.add_argument("--mode", choices=["across-channels", "per-channel"],
                   default="across-channels")
    r.add_argument("-o", "--output", required=True)

    s = sub.add_parser("synth", help="render a synthetic corpus")
    s.add_argument("--images", type=int, help="override data.synth.n_images")
    s.add_argument("-o", "--output", required=True, help="output directory")

    t = sub.add_parser("train", help="staged training with hard negative mining")
    t.add_argument("--manifest", help="training manifest (overrides config)")
    t.add_argument("--bank", help="pre-built bank file (overrides config family)")
    t.add_argument("-o", "--output", required=True, help="model file")

    d = sub.add_parser("detect", help="run a model over a corpus")
    d.add_argument("--model", required=True)
    d.add_argument("--manifest", help="image manifest (overrides config)")
    d.add_argument("--score-min", type=float, dest="score_min")
    d.add_argument("-o", "--output", required=True, help="detection file")

    e = sub.add_parser("eval", help="score detections against annotations")
    e.add_argument("--detections", required=True)
    e.add_argument("--manifest", help="annotated manifest (overrides config)")
    e.add_argument("--protocol", choices=["caltech-mr", "kitti-ap"])
    e.add_argument("-o", "--output", help="curve CSV path")
    e.add_argument("--svg", help="curve SVG path")

    st = sub.add_parser("stats", help="filter usage and spatial influence of a model")
    st.add_argument("--model", required=True)
    st.add_argument("-o", "--output", required=True, help="output directory")
    return p


_COMMANDS = {
    "filters": cmd_filters,
    "synth": cmd_synth,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](args, cfg)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
