"""Synthetic fluoroscopy-like sequences with exact device-tip ground truth.

Devices are tubes swept along C1 cubic Bezier chains that enter from the
bottom edge. Frames show them dark on a brighter, smoothly textured
background; label maps and tip coordinates come straight from the
rasterization, so there is no annotation noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import GenerationError, InvalidArgument
from .imgproc import CATHETER, GUIDEWIRE, Frame, LabelMap

DEVICE_LEVEL = 60
OCCLUDER_LEVEL = 230

# noise sigma, contrast scale, occluder area fraction
PRESETS: dict[str, tuple[float, float, float]] = {
    "clean": (0.0, 1.0, 0.0),
    "moderate": (6.0, 0.85, 0.10),
    "heavy": (12.0, 0.7, 0.25),
}


@dataclass(frozen=True)
class CurveSpec:
    control_points: tuple[tuple[float, float], ...]
    image_size: int
    tube_width: int = 5
    class_id: int = CATHETER
    seed: int = 0
    entry_side: str = "bottom"

    @property
    def n_segments(self) -> int:
        return (len(self.control_points) - 1) // 3

    def sample(self, per_segment: int = 64) -> np.ndarray:
        """Polyline through the chain, (N, 2) float array of (x, y)."""
        cp = np.asarray(self.control_points, dtype=np.float64)
        t = np.linspace(0.0, 1.0, per_segment + 1)[:, None]
        parts = []
        for i in range(self.n_segments):
            p0, p1, p2, p3 = cp[3 * i:3 * i + 4]
            pts = ((1 - t) ** 3) * p0 + 3 * ((1 - t) ** 2) * t * p1 + 3 * (1 - t) * t ** 2 * p2 + t ** 3 * p3
            parts.append(pts if i == 0 else pts[1:])
        return np.concatenate(parts)


@dataclass
class SynthFrameBundle:
    frame: Frame
    gt_mask: LabelMap
    gt_tips: dict[int, tuple[int, int]]
    gt_points: dict[int, tuple[tuple[int, int], tuple[int, int], tuple[int, int]]] = field(
        default_factory=dict
    )
    degradation: dict = field(default_factory=dict)
    tip_arc: dict[int, float] = field(default_factory=dict)


# --------------------------------------------------------------------------
# Curves


def _segments_min_distance(a0, a1, b0, b1) -> np.ndarray:
    """Approximate distance between segment pairs via endpoint-to-segment distances."""

    def point_seg(p, s0, s1):
        d = s1 - s0
        denom = np.maximum((d ** 2).sum(-1), 1e-12)
        u = np.clip(((p - s0) * d).sum(-1) / denom, 0.0, 1.0)
        return np.linalg.norm(p - (s0 + u[..., None] * d), axis=-1)

    return np.minimum.reduce([
        point_seg(a0, b0, b1), point_seg(a1, b0, b1),
        point_seg(b0, a0, a1), point_seg(b1, a0, a1),
    ])


def tube_is_clear(points: np.ndarray, tube_width: float, min_gap: float | None = None) -> bool:
    """True if polyline parts far apart in arc length stay farther than the tube width."""
    seg_len = np.linalg.norm(np.diff(points, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg_len)])
    mid = 0.5 * (arc[:-1] + arc[1:])
    gap = min_gap if min_gap is not None else 2.0 * tube_width + 2.0
    a0, a1 = points[:-1][:, None, :], points[1:][:, None, :]
    b0, b1 = points[:-1][None, :, :], points[1:][None, :, :]
    dist = _segments_min_distance(a0, a1, b0, b1)
    far_in_arc = np.abs(mid[:, None] - mid[None, :]) > 2.0 * gap
    return not np.any(far_in_arc & (dist <= gap))


def gen_curve(
    image_size: int,
    seed: int,
    class_id: int = CATHETER,
    tube_width: int = 5,
    min_length: float | None = None,
    entry_x: float | None = None,
    max_retries: int = 500,
) -> CurveSpec:
    """Random C1 Bezier chain (3-6 segments) entering from the bottom row.

    Headings stay within 60 degrees of straight up and turn at most 40
    degrees per segment, which bounds curvature and rules out
    self-intersection. Deterministic per ``seed``.
    """
    if image_size < 64:
        raise InvalidArgument("image_size must be >= 64")
    if not 1 <= tube_width <= image_size // 8:
        raise InvalidArgument(f"tube_width {tube_width} too large for image {image_size}")
    rng = np.random.default_rng(seed)
    size = float(image_size)
    margin = tube_width + 2.0
    lo_len = min_length if min_length is not None else 0.45 * size
    for _ in range(max_retries):
        n_seg = int(rng.integers(3, 7))
        total = rng.uniform(max(lo_len, 0.45 * size), max(lo_len, 0.45 * size) + 0.4 * size)
        seg = total / n_seg
        x0 = entry_x if entry_x is not None else rng.uniform(0.25 * size, 0.75 * size)
        p0 = np.array([x0, size - 1.0])
        heading = -math.pi / 2 + rng.uniform(-math.pi / 12, math.pi / 12)
        points = [tuple(p0)]
        for _ in range(n_seg):
            nxt = heading + rng.uniform(-math.radians(40), math.radians(40))
            nxt = float(np.clip(nxt, -math.pi / 2 - math.pi / 3, -math.pi / 2 + math.pi / 3))
            d0 = np.array([math.cos(heading), math.sin(heading)])
            d1 = np.array([math.cos(nxt), math.sin(nxt)])
            chord = 0.5 * (d0 + d1)
            chord /= np.linalg.norm(chord)
            p3 = p0 + seg * chord
            p1 = p0 + d0 * seg / 3.0
            p2 = p3 - d1 * seg / 3.0
            points += [tuple(p1), tuple(p2), tuple(p3)]
            p0, heading = p3, nxt
        spec = CurveSpec(tuple((float(x), float(y)) for x, y in points), image_size,
                         tube_width, class_id, seed)
        poly = spec.sample(32)
        xs, ys = poly[:, 0], poly[:, 1]
        if xs.min() < margin or xs.max() > size - 1 - margin or ys.min() < margin:
            continue
        if ys.max() > size - 1 + 1e-9:
            continue
        if _arc_length(poly) < lo_len:
            continue
        if not tube_is_clear(poly, tube_width):
            continue
        return spec
    raise GenerationError(f"no valid curve after {max_retries} attempts (seed {seed})")


def straight_spec(x: float, y_top: float, image_size: int, tube_width: int = 3,
                  class_id: int = CATHETER) -> CurveSpec:
    """Vertical single-segment spec from the bottom row up to ``y_top``."""
    y0 = image_size - 1.0
    pts = [(x, y0 + (y_top - y0) * k / 3.0) for k in range(4)]
    return CurveSpec(tuple(pts), image_size, tube_width, class_id, 0)


def _arc_length(poly: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(poly, axis=0), axis=1).sum())


# --------------------------------------------------------------------------
# Rasterization


class _Path:
    """Arc-length parametrized dense polyline of a spec."""

    def __init__(self, spec: CurveSpec):
        per_seg = max(64, int(4 * _arc_length(spec.sample(16)) / max(spec.n_segments, 1)))
        self.points = spec.sample(per_seg)
        self.arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(self.points, axis=0), axis=1))])
        self.length = float(self.arc[-1])

    def at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        return np.array([np.interp(s, self.arc, self.points[:, 0]),
                         np.interp(s, self.arc, self.points[:, 1])])

    def prefix(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        keep = self.points[self.arc < s]
        return np.vstack([keep, self.at(s)[None, :]])


def _disk(width: int) -> np.ndarray:
    r = width // 2
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx ** 2 + yy ** 2 <= (width / 2.0) ** 2


def _round_pt(p) -> tuple[int, int]:
    return (int(math.floor(p[0] + 0.5)), int(math.floor(p[1] + 0.5)))


def _stamp(poly: np.ndarray, width: int, shape: tuple[int, int]) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = shape
    centres = np.floor(poly + 0.5).astype(np.intp)
    centres[:, 0] = np.clip(centres[:, 0], 0, w - 1)
    centres[:, 1] = np.clip(centres[:, 1], 0, h - 1)
    seeds = np.zeros(shape, dtype=bool)
    seeds[centres[:, 1], centres[:, 0]] = True
    mask = ndimage.binary_dilation(seeds, structure=_disk(width)) if width > 1 else seeds
    return mask, (int(centres[-1, 0]), int(centres[-1, 1]))


def background(image_size: int, seed: int) -> np.ndarray:
    """Smooth bright texture in roughly [160, 220]."""
    rng = np.random.default_rng([seed, 0xB6])
    coarse = ndimage.gaussian_filter(rng.standard_normal((image_size, image_size)), sigma=image_size / 25)
    coarse /= max(float(np.abs(coarse).max()), 1e-9)
    yy, xx = np.mgrid[0:image_size, 0:image_size] / float(image_size)
    ramp = 10.0 * np.sin(2 * math.pi * (xx * 0.7 + yy * 0.3))
    return 190.0 + ramp + 20.0 * coarse


def _compose(masks: Sequence[tuple[int, np.ndarray]], bg: np.ndarray, num_classes: int,
             polarity: str = "dark") -> tuple[Frame, LabelMap]:
    labels = np.zeros(bg.shape, dtype=np.uint8)
    # catheter first so the guidewire wins where they overlap
    for class_id, mask in sorted(masks, key=lambda m: m[0]):
        labels[mask] = class_id if num_classes == 3 else 1
    img = bg.copy()
    level = DEVICE_LEVEL if polarity == "dark" else 255 - DEVICE_LEVEL
    img[labels > 0] = level
    data = np.clip(np.round(img), 0, 255).astype(np.uint8)
    return Frame(data), LabelMap(labels, num_classes)


def _gt_points(path: _Path, s: float, tip: tuple[int, int], arcs=(5.0, 10.0)):
    return (tip, _round_pt(path.at(s - arcs[0])), _round_pt(path.at(s - arcs[1])))


def rasterize(
    specs: CurveSpec | Sequence[CurveSpec],
    image_size: int | None = None,
    num_classes: int | None = None,
    seed: int = 0,
    polarity: str = "dark",
) -> SynthFrameBundle:
    """Draw one or more device tubes; the guidewire (class 2) is drawn over the catheter."""
    specs = [specs] if isinstance(specs, CurveSpec) else list(specs)
    size = image_size or specs[0].image_size
    if num_classes is None:
        num_classes = 3 if any(s.class_id == GUIDEWIRE for s in specs) else 2
    return _render([(_Path(s), None, s) for s in specs], size, num_classes, background(size, seed), polarity)


def _render(items, size, num_classes, bg, polarity="dark") -> SynthFrameBundle:
    masks, tips, points, arcs = [], {}, {}, {}
    for path, s, spec in items:
        s = path.length if s is None else s
        mask, tip = _stamp(path.prefix(s), spec.tube_width, (size, size))
        key = spec.class_id if num_classes == 3 else 1
        masks.append((spec.class_id, mask))
        tips[key] = tip
        points[key] = _gt_points(path, s, tip)
        arcs[key] = s
    frame, labels = _compose(masks, bg, num_classes, polarity)
    return SynthFrameBundle(frame, labels, tips, points, {"noise_sigma": 0.0, "contrast_scale": 1.0,
                                                          "occluders": []}, arcs)


# --------------------------------------------------------------------------
# Degradation


def degrade(
    bundle: SynthFrameBundle,
    noise_sigma: float = 0.0,
    contrast_scale: float = 1.0,
    occluders: Sequence[tuple[int, int, int, int]] = (),
    seed: int = 0,
    occluder_level: int = OCCLUDER_LEVEL,
) -> SynthFrameBundle:
    """Add Gaussian noise, compress contrast toward mid-gray, burn in occluders.

    Occluders are ``(x0, y0, x1, y1)`` half-open rectangles. Their pixels are
    removed from the label map; ``gt_tips`` is kept as metadata.
    """
    if noise_sigma < 0:
        raise InvalidArgument("noise_sigma must be >= 0")
    if not 0 < contrast_scale <= 1:
        raise InvalidArgument("contrast_scale must be in (0, 1]")
    data = bundle.frame.data
    labels = bundle.gt_mask.labels
    if noise_sigma == 0 and contrast_scale == 1 and not occluders:
        out = data
    else:
        img = 128.0 + (data.astype(np.float64) - 128.0) * contrast_scale
        if noise_sigma > 0:
            rng = np.random.default_rng([seed, 0x5EED])
            img = img + rng.normal(0.0, noise_sigma, size=img.shape)
        out = np.clip(np.round(img), 0, 255).astype(np.uint8)
        if occluders:
            labels = labels.copy()
            for x0, y0, x1, y1 in occluders:
                out[y0:y1, x0:x1] = occluder_level
                labels[y0:y1, x0:x1] = 0
    record = {
        "noise_sigma": float(noise_sigma),
        "contrast_scale": float(contrast_scale),
        "occluders": [list(map(int, r)) for r in occluders],
    }
    return SynthFrameBundle(
        Frame(out, bundle.frame.sequence_id, bundle.frame.timestamp),
        LabelMap(labels, bundle.gt_mask.num_classes),
        dict(bundle.gt_tips), dict(bundle.gt_points), record, dict(bundle.tip_arc),
    )


def occluder_for(point: tuple[float, float], area_fraction: float, image_size: int,
                 width_fraction: float = 0.8) -> tuple[int, int, int, int] | None:
    """A wide rectangle of the given image-area fraction centred on ``point``."""
    if area_fraction <= 0:
        return None
    w = int(round(width_fraction * image_size))
    h = max(1, int(round(area_fraction * image_size * image_size / w)))
    x0 = int(np.clip(round(point[0] - w / 2), 0, image_size - w))
    y0 = int(np.clip(round(point[1] - h / 2), 0, image_size - h))
    return (x0, y0, x0 + w, y0 + h)


# --------------------------------------------------------------------------
# Sequences


def _device_specs(image_size, seed, classes, tube_width, min_length) -> list[CurveSpec]:
    if classes == 2:
        return [gen_curve(image_size, seed, CATHETER, tube_width, min_length)]
    rng = np.random.default_rng([seed, 3])
    for attempt in range(100):
        left = rng.uniform(0.2, 0.35) * image_size
        right = rng.uniform(0.65, 0.8) * image_size
        cath = gen_curve(image_size, seed * 1000 + 2 * attempt, CATHETER, tube_width, min_length, left)
        wire = gen_curve(image_size, seed * 1000 + 2 * attempt + 1, GUIDEWIRE,
                         max(3, tube_width - 2), min_length, right)
        a, b = cath.sample(32), wire.sample(32)
        gap = np.min(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1))
        if gap > 4 * tube_width:
            return [cath, wire]
    raise GenerationError(f"could not separate catheter and guidewire (seed {seed})")


def gen_sequence(
    n_frames: int,
    motion: float = 1.0,
    seed: int = 0,
    image_size: int = 500,
    tube_width: int = 5,
    preset: str = "clean",
    classes: int = 2,
) -> list[SynthFrameBundle]:
    """Device advancing ``motion`` arc-length pixels per frame along a fixed path.

    Tip arc positions are ``s0 + k * motion`` (clamped at the path end), so
    they increase monotonically from frame to frame.
    """
    if n_frames < 1:
        raise InvalidArgument("n_frames must be >= 1")
    if motion < 0:
        raise InvalidArgument("motion must be >= 0")
    if preset not in PRESETS:
        raise InvalidArgument(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    if classes not in (2, 3):
        raise InvalidArgument("classes must be 2 or 3")
    sigma, contrast, occ_frac = PRESETS[preset]
    travel = motion * (n_frames - 1)
    min_visible = max(0.25 * image_size, 6.0 * tube_width)
    min_length = min(min_visible + travel, 1.6 * image_size)
    specs = _device_specs(image_size, seed, classes, tube_width, min_length)
    paths = [_Path(spec) for spec in specs]
    starts = [max(min(0.45 * p.length, p.length - travel), min(min_visible, p.length)) for p in paths]
    bg = background(image_size, seed)

    occluders = []
    if occ_frac > 0:
        p, s0 = paths[0], starts[0]
        rect = occluder_for(tuple(p.at(0.55 * s0)), occ_frac, image_size)
        occluders = [rect]

    bundles = []
    for k in range(n_frames):
        items = [(p, min(s0 + k * motion, p.length), spec) for p, s0, spec in zip(paths, starts, specs)]
        b = _render(items, image_size, classes, bg)
        b.frame = Frame(b.frame.data, k, k)
        if sigma or contrast != 1 or occluders:
            b = degrade(b, sigma, contrast, occluders, seed=hash_seed(seed, k))
        bundles.append(b)
    return bundles


def hash_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0])


def write_dataset(bundles: Sequence[SynthFrameBundle], out_dir, manifest: dict) -> None:
    """Write ``frames/``, ``masks/``, ``tips.csv`` and ``manifest.json`` under ``out_dir``."""
    import json
    from pathlib import Path

    from .io import TipAnnotationRow, frame_name, write_mask, write_png, write_tips_csv

    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rows = []
    for b in bundles:
        sid = b.frame.sequence_id
        write_png(out / "frames" / frame_name(sid), b.frame.data)
        write_mask(out / "masks" / frame_name(sid), b.gt_mask)
        for class_id in sorted(b.gt_points):
            (a, c), (d, e), (f, g) = b.gt_points[class_id]
            rows.append(TipAnnotationRow(sid, class_id, a, c, d, e, f, g, True))
    write_tips_csv(rows, out / "tips.csv")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
