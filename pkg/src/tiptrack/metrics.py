"""Segmentation overlap scores, tip-position errors and report emission."""
from __future__ import annotations

import io
import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgument, UndefinedMetricError
from .imgproc import LabelMap
from .postprocess import TipEstimate


@dataclass(frozen=True)
class ClassScores:
    dice: float
    iou: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class SegScores:
    per_class: dict[int, ClassScores]
    mean: ClassScores


@dataclass(frozen=True)
class TipErrors:
    mae_x: float
    mae_y: float
    mae_xy: float
    n_frames: int = 1
    n_invalid: int = 0


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def class_scores(pred: np.ndarray, gt: np.ndarray) -> ClassScores:
    """Scores for one boolean pair. Both empty counts as a perfect match."""
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    if tp + fp + fn == 0:
        return ClassScores(1.0, 1.0, 1.0, 1.0, 1.0)
    dice = _ratio(2 * tp, 2 * tp + fp + fn)
    return ClassScores(
        dice=dice,
        iou=_ratio(tp, tp + fp + fn),
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        f1=dice,
    )


def seg_scores(pred: LabelMap, gt: LabelMap, num_classes: int | None = None) -> SegScores:
    """Per foreground class scores plus their unweighted mean."""
    if pred.labels.shape != gt.labels.shape:
        raise InvalidArgument(f"shape mismatch: {pred.labels.shape} vs {gt.labels.shape}")
    n = num_classes or max(pred.num_classes, gt.num_classes)
    if int(pred.labels.max(initial=0)) >= n or int(gt.labels.max(initial=0)) >= n:
        raise InvalidArgument(f"labels exceed {n} classes")
    per = {c: class_scores(pred.labels == c, gt.labels == c) for c in range(1, n)}
    mean = ClassScores(*(float(np.mean([getattr(s, f.name) for s in per.values()]))
                         for f in fields(ClassScores)))
    return SegScores(per, mean)


def tip_errors(
    preds: Sequence[TipEstimate],
    gts: Sequence[tuple[float, float]],
    spacing: float = 1.0,
) -> TipErrors:
    """Mean absolute tip error per axis and in 2-D, scaled by ``spacing`` (mm/pixel).

    Invalid estimates are counted in ``n_invalid`` and left out of the means.
    """
    if len(preds) != len(gts):
        raise InvalidArgument(f"{len(preds)} predictions vs {len(gts)} ground-truth points")
    if not spacing > 0:
        raise InvalidArgument("spacing must be > 0")
    dx, dy = [], []
    invalid = 0
    for est, (gx, gy) in zip(preds, gts):
        if not est.valid:
            invalid += 1
            continue
        dx.append(abs(est.t0[0] - gx))
        dy.append(abs(est.t0[1] - gy))
    if not dx:
        raise UndefinedMetricError("no valid prediction/ground-truth pairs")
    ax, ay = np.asarray(dx, dtype=np.float64), np.asarray(dy, dtype=np.float64)
    return TipErrors(
        mae_x=float(ax.mean() * spacing),
        mae_y=float(ay.mean() * spacing),
        mae_xy=float(np.hypot(ax, ay).mean() * spacing),
        n_frames=len(preds),
        n_invalid=invalid,
    )


def macro_mean(errors: Mapping[int, TipErrors]) -> TipErrors:
    vals = list(errors.values())
    if not vals:
        raise UndefinedMetricError("no classes to average")
    return TipErrors(
        mae_x=float(np.mean([e.mae_x for e in vals])),
        mae_y=float(np.mean([e.mae_y for e in vals])),
        mae_xy=float(np.mean([e.mae_xy for e in vals])),
        n_frames=sum(e.n_frames for e in vals),
        n_invalid=sum(e.n_invalid for e in vals),
    )


# --------------------------------------------------------------------------
# Reports


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.4f}"
    if v is None:
        return ""
    return str(v)


def _round(v):
    if isinstance(v, float):
        return round(v, 4) if math.isfinite(v) else None
    if isinstance(v, dict):
        return {str(k): _round(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_round(x) for x in v]
    return v


def _flatten(d: Mapping, prefix: str = "") -> list[tuple[str, object]]:
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping):
            out.extend(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            out.append((key, " ".join(_fmt(x) for x in v)))
        else:
            out.append((key, v))
    return out


def _score_table(scores) -> tuple[list[str], list[list]]:
    if isinstance(scores, TipErrors):
        return ["mae_x", "mae_y", "mae_xy"], [[float(scores.mae_x), float(scores.mae_y), float(scores.mae_xy)]]
    if isinstance(scores, SegScores):
        header = ["class"] + [f.name for f in fields(ClassScores)]
        rows = [[str(c)] + [float(v) for v in asdict(s).values()] for c, s in scores.per_class.items()]
        rows.append(["mean"] + [float(v) for v in asdict(scores.mean).values()])
        return header, rows
    if isinstance(scores, Mapping) and all(isinstance(v, TipErrors) for v in scores.values()):
        header = ["class", "mae_x", "mae_y", "mae_xy", "n_frames", "n_invalid"]
        rows = [[str(k), float(e.mae_x), float(e.mae_y), float(e.mae_xy), e.n_frames, e.n_invalid]
                for k, e in scores.items()]
        return header, rows
    raise InvalidArgument(f"cannot report on {type(scores).__name__}")


def _score_json(scores):
    if isinstance(scores, TipErrors):
        return asdict(scores)
    if isinstance(scores, SegScores):
        return {"per_class": {str(c): asdict(s) for c, s in scores.per_class.items()},
                "mean": asdict(scores.mean)}
    return {str(k): asdict(v) for k, v in scores.items()}


def emit_report(scores, stats=None, fmt: str = "csv", config: Mapping | None = None) -> str:
    """Render scores (plus optional pipeline stats and config echo) as CSV or JSON.

    The CSV document is a sequence of blank-line separated blocks: the score
    table first, then ``key,value`` blocks for counts, stats and config.
    """
    stats_d = stats.as_dict() if hasattr(stats, "as_dict") else stats
    if fmt == "json":
        doc = {"scores": _round(_score_json(scores))}
        if stats_d is not None:
            doc["stats"] = _round(dict(stats_d))
        if config is not None:
            doc["config"] = _round(dict(config))
        return json.dumps(doc, indent=2) + "\n"
    if fmt != "csv":
        raise InvalidArgument(f"unsupported report format {fmt!r}")
    header, rows = _score_table(scores)
    blocks = [[header] + [[_fmt(v) for v in row] for row in rows]]
    if isinstance(scores, TipErrors):
        blocks.append([["key", "value"], ["n_frames", str(scores.n_frames)],
                       ["n_invalid", str(scores.n_invalid)]])
    for extra in (stats_d, config):
        if extra is not None:
            blocks.append([["key", "value"]] + [[k, _fmt(v)] for k, v in _flatten(extra)])
    buf = io.StringIO()
    for i, block in enumerate(blocks):
        if i:
            buf.write("\n")
        csv.writer(buf, lineterminator="\n").writerows(block)
    return buf.getvalue()
