"""``tiptrack`` command line: track, eval, eval-seg, bench, synth.

Exit codes: 0 ok, 2 usage, 3 config, 4 ingest, 5 pipeline, 6 evaluation,
7 generation, 8 output refused, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    EvaluationError,
    IngestError,
    InvalidArgument,
    OutputError,
    TipTrackError,
)
from .io import (
    ArraySource,
    ImageDirSource,
    MaskDirStore,
    RawStreamSource,
    TipAnnotationRow,
    TrackerConfig,
    load_config,
    read_png,
    read_tips_csv,
    write_png,
    write_tips_csv,
)
from .imgproc import LabelMap
from .metrics import emit_report, macro_mean, seg_scores, tip_errors
from .pipeline import PipelineStats, TrackingResult, collect, run_pipeline
from .segmentation import ClassicalSegmenter, OracleSegmenter, Segmenter

log = logging.getLogger("tiptrack")

EXIT_OK = 0
EXIT_OTHER = 1


# --------------------------------------------------------------------------
# helpers


def _resolve_config(args) -> TrackerConfig:
    cfg = load_config(getattr(args, "config", None))
    backend = cfg.backend
    try:
        if getattr(args, "backend", None):
            backend = replace(backend, name=args.backend)
        if getattr(args, "classes", None):
            backend = replace(backend, classes=args.classes)
        pipeline = cfg.pipeline
        if getattr(args, "spacing_mm", None) is not None:
            pipeline = replace(pipeline, pixel_spacing_mm=args.spacing_mm)
        if getattr(args, "mode", None):
            pipeline = replace(pipeline, mode=args.mode)
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from None
    return TrackerConfig(pipeline, cfg.postprocess, backend)


def _frames_and_masks(input_path: str, masks: str | None):
    path = Path(input_path)
    if path.is_file():
        return RawStreamSource(path), Path(masks) if masks else None
    if (path / "frames").is_dir():
        return ImageDirSource(path / "frames"), Path(masks) if masks else path / "masks"
    if not path.exists():
        raise IngestError(f"input not found: {path}")
    return ImageDirSource(path), Path(masks) if masks else None


def _backend(cfg: TrackerConfig, mask_dir: Path | None, n_frames: int | None = None) -> Segmenter:
    b = cfg.backend
    if b.name == "classical":
        return ClassicalSegmenter(b.threshold, b.polarity, b.open_radius)
    if mask_dir is None or not mask_dir.is_dir():
        raise IngestError(f"missing annotations: oracle backend needs a mask directory (looked for {mask_dir})")
    store = MaskDirStore(mask_dir, 3)
    if n_frames:
        store = _CyclicStore(store, n_frames)
    return OracleSegmenter(store, b.classes)


class _CyclicStore:
    """Mask lookup for looped sources: frame k reads mask k mod n."""

    def __init__(self, store, n):
        self.store, self.n = store, n

    def __getitem__(self, k):
        return self.store[k % self.n]


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _rows(results: list[TrackingResult]) -> list[TipAnnotationRow]:
    rows = []
    for r in results:
        for class_id in sorted(r.tip_estimates):
            rows.append(TipAnnotationRow.from_estimate(r.tip_estimates[class_id], r.frame_sequence_id))
    return rows


_MARK = {"t0": (255, 0, 0), "t1": (0, 200, 0), "t2": (0, 80, 255)}


def _write_overlays(frames_source, results, out_dir: Path) -> None:
    from PIL import Image, ImageDraw

    out_dir.mkdir(parents=True, exist_ok=True)
    by_id = {r.frame_sequence_id: r for r in results}
    for frame in frames_source:
        r = by_id.get(frame.sequence_id)
        if r is None:
            continue
        rgb = frame.data if frame.channels == 3 else np.stack([frame.data] * 3, axis=-1)
        im = Image.fromarray(np.ascontiguousarray(rgb))
        draw = ImageDraw.Draw(im)
        for est in r.tip_estimates.values():
            if not est.valid:
                continue
            for name, (x, y) in zip(("t0", "t1", "t2"), est.points()):
                rad = 3 if name == "t0" else 2
                draw.ellipse((x - rad, y - rad, x + rad, y + rad), outline=_MARK[name])
        im.save(out_dir / f"{frame.sequence_id:06d}.png", format="PNG")


# --------------------------------------------------------------------------
# commands


def cmd_track(args) -> int:
    cfg = _resolve_config(args)
    source, mask_dir = _frames_and_masks(args.input, args.masks)
    backend = _backend(cfg, mask_dir)
    results, stats = collect(run_pipeline, source, backend, cfg.postprocess, cfg.pipeline)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_tips_csv(_rows(results), out)
    stats_path = Path(args.stats) if args.stats else out.with_suffix(".stats.json")
    doc = {"stats": stats.as_dict(), "config": cfg.echo()}
    _write_text(stats_path, json.dumps(doc, indent=2) + "\n")
    if args.overlay_dir:
        overlay_src, _ = _frames_and_masks(args.input, args.masks)
        _write_overlays(overlay_src, results, Path(args.overlay_dir))
    log.info("tracked %d frames (%d dropped), %.1f fps", stats.frames_out, stats.frames_dropped,
             stats.throughput_fps if stats.frames_out else 0.0)
    return EXIT_OK


def _by_class(rows: list[TipAnnotationRow]) -> dict[int, dict[int, TipAnnotationRow]]:
    out: dict[int, dict[int, TipAnnotationRow]] = {}
    for r in rows:
        out.setdefault(r.class_id, {})[r.frame_id] = r
    return out


def _emit(scores, output: str | None, config: dict | None = None) -> None:
    csv_doc = emit_report(scores, fmt="csv", config=config)
    json_doc = emit_report(scores, fmt="json", config=config)
    if output:
        base = Path(output)
        _write_text(base.with_suffix(".csv"), csv_doc)
        _write_text(base.with_suffix(".json"), json_doc)
    sys.stdout.write(csv_doc)


def cmd_eval(args) -> int:
    pred = _by_class(read_tips_csv(args.pred))
    gt = _by_class(read_tips_csv(args.gt))
    problems = []
    for class_id in sorted(set(pred) | set(gt)):
        p_ids, g_ids = set(pred.get(class_id, {})), set(gt.get(class_id, {}))
        if p_ids != g_ids:
            miss_p = sorted(g_ids - p_ids)
            miss_g = sorted(p_ids - g_ids)
            problems.append(f"class {class_id}: missing in pred {miss_p[:20]}, missing in gt {miss_g[:20]}")
    if problems:
        raise EvaluationError("frame ids do not align; " + "; ".join(problems))
    per_class = {}
    for class_id in sorted(gt):
        ids = sorted(gt[class_id])
        preds = [pred[class_id][i].to_estimate() for i in ids]
        gts = [gt[class_id][i].t0 for i in ids]
        per_class[class_id] = tip_errors(preds, gts, args.spacing_mm)
    if not per_class:
        raise EvaluationError("no annotation rows to evaluate")
    table = {str(k): v for k, v in per_class.items()}
    table["mean"] = macro_mean(per_class)
    _emit(table, args.output, {"spacing_mm": args.spacing_mm,
                               "units": "mm" if args.spacing_mm != 1.0 else "px"})
    return EXIT_OK


def cmd_eval_seg(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            raise IngestError(f"mask directory not found: {d}")
    names_p = {p.name for p in pred_dir.glob("*.png")}
    names_g = {p.name for p in gt_dir.glob("*.png")}
    if names_p != names_g:
        raise EvaluationError(
            f"mask sets differ: missing in pred {sorted(names_g - names_p)[:20]}, "
            f"missing in gt {sorted(names_p - names_g)[:20]}"
        )
    if not names_g:
        raise EvaluationError("no masks to evaluate")
    n = args.classes
    confusion = {c: [0, 0, 0] for c in range(1, n)}  # tp, fp, fn summed over frames
    for name in sorted(names_g):
        p, g = read_png(pred_dir / name), read_png(gt_dir / name)
        if n == 2:
            p, g = (p > 0).astype(np.uint8), (g > 0).astype(np.uint8)
        try:
            pm, gm = LabelMap(p, n), LabelMap(g, n)
        except InvalidArgument as exc:
            raise IngestError(f"{name}: {exc}") from None
        if pm.labels.shape != gm.labels.shape:
            raise EvaluationError(f"{name}: shape mismatch {pm.labels.shape} vs {gm.labels.shape}")
        for c in confusion:
            a, b = pm.labels == c, gm.labels == c
            confusion[c][0] += int(np.count_nonzero(a & b))
            confusion[c][1] += int(np.count_nonzero(a & ~b))
            confusion[c][2] += int(np.count_nonzero(~a & b))
    scores = _pooled_scores(confusion)
    _emit(scores, args.output, {"classes": n, "frames": len(names_g)})
    return EXIT_OK


def _pooled_scores(confusion):
    from .metrics import ClassScores, SegScores

    per = {}
    for c, (tp, fp, fn) in confusion.items():
        if tp + fp + fn == 0:
            per[c] = ClassScores(1.0, 1.0, 1.0, 1.0, 1.0)
            continue
        dice = 2 * tp / (2 * tp + fp + fn)
        per[c] = ClassScores(dice, tp / (tp + fp + fn), tp / (tp + fp) if tp + fp else 0.0,
                             tp / (tp + fn) if tp + fn else 0.0, dice)
    mean = ClassScores(*(float(np.mean([getattr(s, k) for s in per.values()]))
                         for k in ("dice", "iou", "precision", "recall", "f1")))
    return SegScores(per, mean)


class _TimedLoop:
    """Replays frames with increasing ids until ``duration`` seconds have passed."""

    def __init__(self, frames, duration: float):
        self.frames = frames
        self.duration = duration
        self.fps_hint = None

    def __iter__(self):
        start = time.perf_counter()
        k = 0
        n = len(self.frames)
        while k < n or time.perf_counter() - start < self.duration:
            f = self.frames[k % n]
            yield type(f)(f.data, k, k)
            k += 1


def cmd_bench(args) -> int:
    if not args.duration > 0:
        raise ConfigError("--duration must be > 0 seconds")
    cfg = _resolve_config(args)
    source, mask_dir = _frames_and_masks(args.input, args.masks)
    frames = list(source)
    backend = _backend(cfg, mask_dir, n_frames=len(frames))
    stats = run_pipeline(_TimedLoop(frames, args.duration), backend, cfg.postprocess, cfg.pipeline)
    doc = stats.as_dict()
    doc["backend"] = cfg.backend.name
    doc["frame_size"] = [frames[0].width, frames[0].height]
    text = json.dumps(doc, indent=2) + "\n"
    if args.output:
        _write_text(Path(args.output), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import gen_sequence, write_dataset

    out = Path(args.output)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise OutputError(f"{out} is not empty; pass --force to overwrite")
    if out.exists() and args.force:
        import shutil

        for sub in ("frames", "masks"):
            shutil.rmtree(out / sub, ignore_errors=True)
    bundles = gen_sequence(
        args.frames, motion=args.motion, seed=args.seed, image_size=args.size,
        tube_width=args.tube_width, preset=args.preset, classes=args.classes,
    )
    manifest = {
        "generator": "tiptrack.synth.gen_sequence",
        "version": __version__,
        "preset": args.preset,
        "n_frames": args.frames,
        "seed": args.seed,
        "image_size": args.size,
        "tube_width": args.tube_width,
        "motion": args.motion,
        "classes": args.classes,
        "occluders": bundles[0].degradation.get("occluders", []),
    }
    write_dataset(bundles, out, manifest)
    log.info("wrote %d frames to %s", len(bundles), out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tiptrack", description="Catheter/guidewire tip tracking")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, backend=True):
        sp.add_argument("--config", help="flat 'section.key = value' config file")
        sp.add_argument("--input", required=True, help="frame dir, synth dataset dir, or RAWV1 stream")
        sp.add_argument("--masks", help="ground-truth mask dir for the oracle backend")
        if backend:
            sp.add_argument("--backend", choices=("oracle", "classical"))
            sp.add_argument("--classes", type=int, choices=(2, 3))
            sp.add_argument("--mode", choices=("offline", "live"))

    t = sub.add_parser("track", help="run the pipeline and write tips.csv")
    common(t)
    t.add_argument("--output", required=True, help="tips.csv path")
    t.add_argument("--stats", help="stats JSON path (default: <output>.stats.json)")
    t.add_argument("--overlay-dir", help="write PNG overlays with T0/T1/T2 markers")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="tip MAE between two tips.csv files")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--spacing-mm", type=float, default=1.0)
    e.add_argument("--output", help="report path prefix (.csv and .json are written)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("eval-seg", help="Dice/IoU/precision/recall between mask dirs")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--classes", type=int, choices=(2, 3), default=3)
    s.add_argument("--output")
    s.set_defaults(func=cmd_eval_seg)

    b = sub.add_parser("bench", help="throughput and per-stage latency")
    common(b)
    b.add_argument("--duration", type=float, default=10.0, help="seconds; the input loops")
    b.add_argument("--output", help="stats JSON path")
    b.set_defaults(func=cmd_bench)

    y = sub.add_parser("synth", help="generate a synthetic dataset")
    y.add_argument("--preset", choices=("clean", "moderate", "heavy"), default="clean")
    y.add_argument("--frames", type=int, default=100)
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--output", required=True)
    y.add_argument("--force", action="store_true")
    y.add_argument("--classes", type=int, choices=(2, 3), default=2)
    y.add_argument("--size", type=int, default=500)
    y.add_argument("--tube-width", type=int, default=5)
    y.add_argument("--motion", type=float, default=1.0)
    y.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TipTrackError as exc:
        print(f"tiptrack: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except InvalidArgument as exc:
        print(f"tiptrack: error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
