"""Mask post-processing: from a segmentation map to T0/T1/T2 tip points.

The per-class sequence is

    binary mask -> components -> bbox merging -> principal selection
    -> artifact filtering -> thinning -> endpoints -> base/tip
    -> greedy arc-length sampling

with a contour-based fallback when the skeleton has fewer than two
endpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import FallbackRequired, InvalidArgument, NoPrincipalError
from .imgproc import (
    Component,
    LabelMap,
    ProbMap,
    connected_components,
    to_binary,
    union,
)

Point = tuple[int, int]

SQRT2 = math.sqrt(2.0)

# Scan order N, NE, E, SE, S, SW, W, NW as (dx, dy); also the bit order of
# the neighbourhood codes below.
NEIGHBOURS: tuple[tuple[int, int], ...] = (
    (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1),
)

BASE_RULES = ("inferior", "top")
METHODS = ("skeleton", "contour_fallback", "degenerate")


@dataclass(frozen=True)
class PostprocessConfig:
    d_merge: float = 10.0
    a_min: float = 20.0
    d_max: float = 150.0
    arc_t1: float = 5.0
    arc_t2: float = 10.0
    principal_reach_delta: float = 0.10
    # "top": base is the minimum-y endpoint, read literally.
    # "inferior": base is the endpoint nearest the bottom edge (device entry).
    base_rule: str = "inferior"

    def __post_init__(self):
        if self.d_merge < 0:
            raise InvalidArgument("d_merge must be >= 0")
        if self.a_min < 0:
            raise InvalidArgument("a_min must be >= 0")
        if self.d_max <= 0:
            raise InvalidArgument("d_max must be > 0")
        if not 0 < self.arc_t1 < self.arc_t2:
            raise InvalidArgument("need 0 < arc_t1 < arc_t2")
        if not 0 <= self.principal_reach_delta <= 1:
            raise InvalidArgument("principal_reach_delta must be in [0, 1]")
        if self.base_rule not in BASE_RULES:
            raise InvalidArgument(f"base_rule must be one of {BASE_RULES}")


@dataclass(frozen=True)
class Skeleton:
    pixels: frozenset[Point]
    endpoints: tuple[Point, ...] = ()

    def neighbours(self, p: Point) -> list[Point]:
        x, y = p
        return [(x + dx, y + dy) for dx, dy in NEIGHBOURS if (x + dx, y + dy) in self.pixels]

    @property
    def adjacency(self) -> dict[Point, list[Point]]:
        return {p: self.neighbours(p) for p in self.pixels}

    def __len__(self) -> int:
        return len(self.pixels)


@dataclass(frozen=True)
class TipEstimate:
    t0: Point
    t1: Point
    t2: Point
    base: Point
    method: str = "skeleton"
    frame_sequence_id: int = 0
    valid: bool = True
    class_id: int = 1

    @classmethod
    def degenerate(cls, sequence_id: int = 0, class_id: int = 1) -> "TipEstimate":
        nil = (-1, -1)
        return cls(nil, nil, nil, nil, "degenerate", sequence_id, False, class_id)

    def points(self) -> tuple[Point, Point, Point]:
        return (self.t0, self.t1, self.t2)


# --------------------------------------------------------------------------
# Component-level steps


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller index wins so roots are deterministic
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def merge_components(components: list[Component], d_merge: float) -> list[Component]:
    """Merge components whose bboxes, grown by ``d_merge`` on every side, touch.

    The relation is closed transitively, so chains A-B, B-C end up as one
    component even when A and C are far apart.
    """
    n = len(components)
    if n <= 1:
        return list(components)
    boxes = np.array([c.bbox for c in components], dtype=np.float64)
    lo = boxes[:, :2] - d_merge
    hi = boxes[:, 2:] + d_merge
    overlap = np.all(
        (lo[:, None, :] <= hi[None, :, :]) & (lo[None, :, :] <= hi[:, None, :]), axis=2
    )
    uf = _UnionFind(n)
    for i, j in zip(*np.nonzero(np.triu(overlap, k=1))):
        uf.union(int(i), int(j))
    groups: dict[int, list[Component]] = {}
    for i, comp in enumerate(components):
        groups.setdefault(uf.find(i), []).append(comp)
    merged = [g[0] if len(g) == 1 else union(g) for g in groups.values()]
    merged.sort(key=Component.sort_key)
    return merged


def select_principal(
    components: list[Component], image_height: int, reach_delta: float = 0.10
) -> Component:
    """Largest component among those reaching close to the bottom edge."""
    if not components:
        raise NoPrincipalError("no components to choose a principal structure from")
    lowest = max(c.bbox[3] for c in components)
    cutoff = lowest - reach_delta * image_height
    reaching = [c for c in components if c.bbox[3] >= cutoff]
    return min(reaching, key=lambda c: (-c.area, -c.bbox[3], c.bbox[1], c.bbox[0]))


def filter_artifacts(
    components: list[Component],
    principal: Component,
    principal_tip_hint: tuple[float, float],
    a_min: float,
    d_max: float,
) -> list[Component]:
    hx, hy = principal_tip_hint
    kept = []
    for comp in components:
        if comp is principal:
            kept.append(comp)
            continue
        cx, cy = comp.centroid
        if comp.area >= a_min and math.hypot(cx - hx, cy - hy) <= d_max:
            kept.append(comp)
    return kept


# --------------------------------------------------------------------------
# Thinning


def _neighbour_codes(img: np.ndarray) -> np.ndarray:
    """8-bit neighbourhood code per pixel; bit k set iff NEIGHBOURS[k] is on.

    ``img`` must carry a one-pixel background border.
    """
    img = img.astype(np.uint8)
    h, w = img.shape
    code = np.zeros((h, w), dtype=np.uint8)
    inner = code[1:-1, 1:-1]
    for bit, (dx, dy) in enumerate(NEIGHBOURS):
        inner |= img[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx] << bit
    return code


def _ring_groups(code: int) -> int:
    """8-connected groups among the on-neighbours of a pixel, centre excluded."""
    on = {NEIGHBOURS[k] for k in range(8) if code >> k & 1}
    groups = 0
    while on:
        groups += 1
        stack = [on.pop()]
        while stack:
            x, y = stack.pop()
            near = {q for q in on if max(abs(q[0] - x), abs(q[1] - y)) == 1}
            on -= near
            stack.extend(near)
    return groups


def _zs_luts(b_min: int) -> tuple[np.ndarray, np.ndarray]:
    step1 = np.zeros(256, dtype=bool)
    step2 = np.zeros(256, dtype=bool)
    for code in range(256):
        p = [(code >> k) & 1 for k in range(8)]  # p[0]=N ... p[7]=NW
        n, _, e, _, s, _, w, _ = p
        b = sum(p)
        a = sum(1 for k in range(8) if p[k] == 0 and p[(k + 1) % 8] == 1)
        base = b_min <= b <= 6 and a == 1
        step1[code] = base and n * e * s == 0 and e * s * w == 0
        step2[code] = base and n * e * w == 0 and n * s * w == 0
    return step1, step2


def _build_luts() -> tuple[np.ndarray, np.ndarray]:
    yokoi = np.zeros(256, dtype=np.uint8)
    ring = np.zeros(256, dtype=np.uint8)
    for code in range(256):
        p = [(code >> k) & 1 for k in range(8)]
        # 8-connectivity number of the pixel (simple point iff == 1)
        q = [1 - v for v in p]
        yokoi[code] = sum(q[k] - q[k] * q[k + 1] * q[(k + 2) % 8] for k in (0, 2, 4, 6))
        ring[code] = _ring_groups(code)
    return yokoi, ring


_YOKOI8, _RING_GROUPS = _build_luts()
_POPCOUNT = np.array([bin(c).count("1") for c in range(256)], dtype=np.uint8)
_ZS = {2: _zs_luts(2), 3: _zs_luts(3)}


def zhang_suen(mask: np.ndarray, b_min: int = 3) -> np.ndarray:
    """Two-subiteration Zhang-Suen thinning run to a fixed point.

    ``b_min`` is the smallest neighbour count at which a contour pixel may be
    deleted. The original rule uses 2, which erodes 2-pixel-thick diagonal
    runs away entirely; 3 (the Lu-Wang variant) keeps them.
    """
    if b_min not in _ZS:
        raise InvalidArgument("b_min must be 2 or 3")
    img = np.pad(np.asarray(mask, dtype=bool), 1)
    while True:
        changed = False
        for lut in _ZS[b_min]:
            kill = img & lut[_neighbour_codes(img)]
            if kill.any():
                img &= ~kill
                changed = True
        if not changed:
            return img[1:-1, 1:-1]


def _code_at(img: np.ndarray, y: int, x: int) -> int:
    code = 0
    for bit, (dx, dy) in enumerate(NEIGHBOURS):
        code |= int(img[y + dy, x + dx]) << bit
    return code


def _is_simple(code: int) -> bool:
    return _YOKOI8[code] == 1 and bin(code).count("1") >= 2


def _keeps_connected(code: int) -> bool:
    # removal may open a hole into the background but never splits the foreground
    return _RING_GROUPS[code] == 1


def _prune_staircases(img: np.ndarray) -> None:
    """Remove pixels that are redundant under 8-connectivity, in place (padded image).

    Lu-Wang thinning leaves 4-connected staircases on diagonals. Simple
    pixels with 3+ neighbours are deleted in raster order until none remain;
    pixels with two neighbours are only trimmed once, so a staircase is not
    eaten from its end.
    """
    while True:
        code = _neighbour_codes(img)
        cand = img & (_YOKOI8[code] == 1) & (_POPCOUNT[code] >= 3)
        if not cand.any():
            break
        removed = False
        for y, x in zip(*map(np.ndarray.tolist, np.nonzero(cand))):
            c = _code_at(img, y, x)
            if _YOKOI8[c] == 1 and _POPCOUNT[c] >= 3:
                img[y, x] = False
                removed = True
        if not removed:
            break
    # One pass over L-shaped ends (two mutually adjacent neighbours); a pixel
    # next to one already trimmed is skipped so nothing cascades.
    code = _neighbour_codes(img)
    trimmed = np.zeros_like(img)
    cand = img & (_YOKOI8[code] == 1) & (_POPCOUNT[code] == 2)
    for y, x in zip(*map(np.ndarray.tolist, np.nonzero(cand))):
        if trimmed[y - 1:y + 2, x - 1:x + 2].any():
            continue
        c = _code_at(img, y, x)
        if _YOKOI8[c] == 1 and _POPCOUNT[c] == 2:
            img[y, x] = False
            trimmed[y, x] = True


def _break_square_blocks(img: np.ndarray) -> None:
    """Delete pixels from surviving 2x2 blocks, in place (padded image).

    Preference order: topology-preserving (simple) pixels, then pixels whose
    removal keeps the foreground locally connected, then the raster-first
    block pixel.
    """
    for test in (_is_simple, _keeps_connected, None):
        while True:
            block = img[:-1, :-1] & img[1:, :-1] & img[:-1, 1:] & img[1:, 1:]
            if not block.any():
                return
            removed = False
            by, bx = np.nonzero(block)
            for y, x in zip(by.tolist(), bx.tolist()):
                if not img[y:y + 2, x:x + 2].all():
                    continue
                for yy, xx in ((y, x), (y, x + 1), (y + 1, x), (y + 1, x + 1)):
                    if test is None or test(_code_at(img, yy, xx)):
                        img[yy, xx] = False
                        removed = True
                        break
            if not removed:
                break


def skeletonize(component: Component) -> Skeleton:
    """Thin ``component`` to a one-pixel-wide, 8-connected medial axis."""
    local, ox, oy = component.local_mask(pad=1)
    thin = np.pad(zhang_suen(local), 1)
    _prune_staircases(thin)
    _break_square_blocks(thin)
    thin = thin[1:-1, 1:-1]
    # Every 8-connected piece of the input keeps at least one pixel.
    for piece in connected_components(local, 8):
        if not thin[piece.ys, piece.xs].any():
            cx, cy = piece.centroid
            k = int(np.argmin((piece.xs - cx) ** 2 + (piece.ys - cy) ** 2))
            thin[piece.ys[k], piece.xs[k]] = True
    ys, xs = np.nonzero(thin)
    pixels = frozenset(zip((xs + ox).tolist(), (ys + oy).tolist()))
    skel = Skeleton(pixels)
    return Skeleton(pixels, tuple(detect_endpoints(skel)))


def detect_endpoints(skeleton: Skeleton) -> list[Point]:
    """Skeleton pixels with exactly one 8-connected skeleton neighbour, sorted by (y, x)."""
    if not skeleton.pixels:
        return []
    pts = np.array(sorted(skeleton.pixels, key=lambda p: (p[1], p[0])), dtype=np.intp)
    x0, y0 = pts[:, 0].min() - 1, pts[:, 1].min() - 1
    img = np.zeros((pts[:, 1].max() - y0 + 2, pts[:, 0].max() - x0 + 2), dtype=np.uint8)
    img[pts[:, 1] - y0, pts[:, 0] - x0] = 1
    counts = np.zeros_like(img)
    h, w = img.shape
    for dx, dy in NEIGHBOURS:
        counts[1:-1, 1:-1] += img[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
    hit = counts[pts[:, 1] - y0, pts[:, 0] - x0] == 1
    return [(int(x), int(y)) for x, y in pts[hit]]


# --------------------------------------------------------------------------
# Base / tip


def _base_key(rule: str):
    if rule == "top":
        return lambda p: (p[1], p[0])
    if rule == "inferior":
        return lambda p: (-p[1], p[0])
    raise InvalidArgument(f"unknown base rule {rule!r}")


def _farthest(points: Iterable[Point], origin: Point) -> Point:
    bx, by = origin
    # squared integer distances keep ties exact
    return max(points, key=lambda p: ((p[0] - bx) ** 2 + (p[1] - by) ** 2, p[1], p[0]))


def select_base_and_tip(
    skeleton: Skeleton, endpoints: list[Point], base_rule: str = "top"
) -> tuple[Point, Point]:
    """Base is the extreme endpoint under ``base_rule``; tip is the endpoint farthest from it.

    With the default ``"top"`` rule the base is the minimum-y endpoint
    (ties: minimum x). Tip ties go to larger y, then larger x.
    """
    if len(endpoints) < 2:
        raise FallbackRequired(f"{len(endpoints)} endpoint(s); need at least 2")
    base = min(endpoints, key=_base_key(base_rule))
    return base, _farthest(endpoints, base)


def boundary_pixels(component: Component) -> list[Point]:
    """Component pixels with fewer than eight foreground neighbours."""
    local, ox, oy = component.local_mask(pad=1)
    code = _neighbour_codes(local)
    edge = local & (code != 0xFF)
    ys, xs = np.nonzero(edge)
    return list(zip((xs + ox).tolist(), (ys + oy).tolist()))


def contour_fallback_tip(component: Component, base_rule: str = "top") -> tuple[Point, Point]:
    pixels = list(zip(component.xs.tolist(), component.ys.tolist()))
    base = min(pixels, key=_base_key(base_rule))
    return base, _farthest(boundary_pixels(component), base)


# --------------------------------------------------------------------------
# Multi-point sampling


def _walk(skeleton: Skeleton, start: Point, arc_targets: tuple[float, ...]) -> list[Point]:
    """Greedy walk from ``start``; returns the first pixel reaching each target arc."""
    sx, sy = start
    visited = {start}
    current = start
    arc = 0.0
    hits: list[Point] = []
    while len(hits) < len(arc_targets):
        best, best_d = None, -1
        for dx, dy in NEIGHBOURS:
            q = (current[0] + dx, current[1] + dy)
            if q in skeleton.pixels and q not in visited:
                d = (q[0] - sx) ** 2 + (q[1] - sy) ** 2
                if d > best_d:
                    best, best_d = q, d
        if best is None:
            break
        arc += SQRT2 if best[0] != current[0] and best[1] != current[1] else 1.0
        visited.add(best)
        current = best
        while len(hits) < len(arc_targets) and arc >= arc_targets[len(hits)]:
            hits.append(current)
    hits.extend([current] * (len(arc_targets) - len(hits)))
    return hits


def sample_multipoint(
    skeleton: Skeleton,
    tip: Point,
    config: PostprocessConfig,
    base: Point | None = None,
    sequence_id: int = 0,
    class_id: int = 1,
) -> TipEstimate:
    """Sample T1 and T2 at ``arc_t1``/``arc_t2`` along the skeleton from ``tip``.

    Steps cost 1 (orthogonal) or sqrt(2) (diagonal). A skeleton too short to
    reach a target clamps that point to the last pixel visited.
    """
    tip = (int(tip[0]), int(tip[1]))
    if tip not in skeleton.pixels:
        raise InvalidArgument(f"tip {tip} is not a skeleton pixel")
    t1, t2 = _walk(skeleton, tip, (config.arc_t1, config.arc_t2))
    return TipEstimate(
        t0=tip, t1=t1, t2=t2, base=base if base is not None else tip,
        method="skeleton", frame_sequence_id=sequence_id, valid=True, class_id=class_id,
    )


# --------------------------------------------------------------------------
# Composition


def _tip_hint(principal: Component, base_rule: str) -> Point:
    """Extreme pixel of the principal at the end away from the base edge."""
    pixels = zip(principal.xs.tolist(), principal.ys.tolist())
    if base_rule == "top":
        return min(pixels, key=lambda p: (-p[1], p[0]))
    return min(pixels, key=lambda p: (p[1], p[0]))


def track_class(
    mask: np.ndarray,
    config: PostprocessConfig,
    previous: TipEstimate | None = None,
    sequence_id: int = 0,
    class_id: int = 1,
) -> TipEstimate:
    """Run the post-processor on one binary class mask."""
    components = connected_components(mask, 8)
    if not components:
        return TipEstimate.degenerate(sequence_id, class_id)
    merged = merge_components(components, config.d_merge)
    principal = select_principal(merged, mask.shape[0], config.principal_reach_delta)
    if previous is not None and previous.valid:
        hint = previous.t0
    else:
        hint = _tip_hint(principal, config.base_rule)
    survivors = filter_artifacts(merged, principal, hint, config.a_min, config.d_max)
    region = survivors[0] if len(survivors) == 1 else union(survivors)
    skeleton = skeletonize(region)
    try:
        base, tip = select_base_and_tip(skeleton, list(skeleton.endpoints), config.base_rule)
    except FallbackRequired:
        base, tip = contour_fallback_tip(region, config.base_rule)
        # T1/T2 come from the skeleton pixel nearest the contour tip
        anchor = min(
            skeleton.pixels,
            key=lambda p: ((p[0] - tip[0]) ** 2 + (p[1] - tip[1]) ** 2, p[1], p[0]),
        )
        t1, t2 = _walk(skeleton, anchor, (config.arc_t1, config.arc_t2))
        return TipEstimate(tip, t1, t2, base, "contour_fallback", sequence_id, True, class_id)
    est = sample_multipoint(skeleton, tip, config, base, sequence_id, class_id)
    return est


def extract_tips(
    seg: LabelMap | ProbMap,
    config: PostprocessConfig | None = None,
    previous: Mapping[int, TipEstimate] | TipEstimate | None = None,
    sequence_id: int = 0,
) -> dict[int, TipEstimate]:
    """Per-class tip estimates keyed by class id.

    A 2-class map yields ``{1: ...}`` for the instrument class; a 3-class map
    yields ``{1: catheter, 2: guidewire}``.
    """
    config = config or PostprocessConfig()
    labels = seg.argmax() if isinstance(seg, ProbMap) else seg
    if isinstance(previous, TipEstimate):
        previous = {previous.class_id: previous}
    previous = previous or {}
    out = {}
    for class_id in range(1, labels.num_classes):
        mask = to_binary(labels, {class_id})
        out[class_id] = track_class(mask, config, previous.get(class_id), sequence_id, class_id)
    return out
