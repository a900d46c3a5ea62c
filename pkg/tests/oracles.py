"""Slow, obviously-correct reference implementations used only by the tests."""
from __future__ import annotations

import math
from collections import deque

import numpy as np

N8 = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)]
N4 = [(0, -1), (1, 0), (0, 1), (-1, 0)]


def flood_fill_partition(mask: np.ndarray, connectivity: int = 8) -> set[frozenset]:
    """Components as a set of frozensets of (x, y), by BFS."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    nbrs = N8 if connectivity == 8 else N4
    parts = set()
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or seen[y, x]:
                continue
            comp = []
            q = deque([(x, y)])
            seen[y, x] = True
            while q:
                cx, cy = q.popleft()
                comp.append((cx, cy))
                for dx, dy in nbrs:
                    nx, ny = cx + dx, cy + dy
                    if 0 <= nx < w and 0 <= ny < h and mask[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        q.append((nx, ny))
            parts.add(frozenset(comp))
    return parts


def erode(mask: np.ndarray, r: int) -> np.ndarray:
    """Square-element erosion; pixels outside the image count as background."""
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for y in range(h):
        for x in range(w):
            ok = True
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy, xx = y + dy, x + dx
                    if not (0 <= yy < h and 0 <= xx < w and mask[yy, xx]):
                        ok = False
            out[y, x] = ok
    return out


def dilate(mask: np.ndarray, r: int) -> np.ndarray:
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                out[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1] = True
    return out


def neighbour_count_endpoints(pixels) -> set:
    s = set(pixels)
    return {p for p in s if sum((p[0] + dx, p[1] + dy) in s for dx, dy in N8) == 1}


def has_2x2_block(pixels) -> bool:
    s = set(pixels)
    return any({(x + 1, y), (x, y + 1), (x + 1, y + 1)} <= s for x, y in s)


def bbox_closure(bboxes, d: float) -> set[frozenset]:
    """Transitive closure of pairwise expanded-bbox intersection, by repeated relaxation."""
    n = len(bboxes)

    def touch(a, b):
        ax0, ay0, ax1, ay1 = bboxes[a]
        bx0, by0, bx1, by1 = bboxes[b]
        return (ax0 - d <= bx1 + d and bx0 - d <= ax1 + d
                and ay0 - d <= by1 + d and by0 - d <= ay1 + d)

    label = list(range(n))
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for j in range(n):
                if touch(i, j) and label[j] != label[i]:
                    lo = min(label[i], label[j])
                    label[i] = label[j] = lo
                    changed = True
    groups: dict[int, set] = {}
    for i, lab in enumerate(label):
        groups.setdefault(lab, set()).add(i)
    return {frozenset(g) for g in groups.values()}


def confusion(pred: np.ndarray, gt: np.ndarray, c: int) -> tuple[int, int, int]:
    tp = fp = fn = 0
    for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
        if p == c and g == c:
            tp += 1
        elif p == c:
            fp += 1
        elif g == c:
            fn += 1
    return tp, fp, fn


def path_arc(path) -> list[float]:
    """Cumulative Euclidean arc along a pixel path."""
    out = [0.0]
    for (x0, y0), (x1, y1) in zip(path, path[1:]):
        out.append(out[-1] + math.hypot(x1 - x0, y1 - y0))
    return out


def segments_cross(p1, p2, p3, p4) -> bool:
    """Proper or touching intersection of closed segments p1p2 and p3p4."""
    scale = max(abs(v) for p in (p1, p2, p3, p4) for v in p) + 1.0
    eps = 1e-9 * scale * scale

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) <= eps else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        t = 1e-9 * scale
        return min(a[0], b[0]) - t <= c[0] <= max(a[0], b[0]) + t and \
            min(a[1], b[1]) - t <= c[1] <= max(a[1], b[1]) + t

    o1, o2, o3, o4 = orient(p1, p2, p3), orient(p1, p2, p4), orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 * o2 < 0 and o3 * o4 < 0:
        return True
    return ((o1 == 0 and on_seg(p1, p2, p3)) or (o2 == 0 and on_seg(p1, p2, p4))
            or (o3 == 0 and on_seg(p3, p4, p1)) or (o4 == 0 and on_seg(p3, p4, p2)))


def polyline_self_intersects(poly) -> bool:
    n = len(poly) - 1
    for i in range(n):
        for j in range(i + 2, n):
            if segments_cross(poly[i], poly[i + 1], poly[j], poly[j + 1]):
                return True
    return False


def random_simple_path(rng: np.random.Generator, length: int, size: int = 64):
    """Random 8-connected path with no pixel touching a non-consecutive one.

    Such a path is its own skeleton: it has exactly two endpoints and a
    unique walk between them.
    """
    for _ in range(200):
        x, y = int(rng.integers(8, size - 8)), int(rng.integers(8, size - 8))
        path = [(x, y)]
        heading = int(rng.integers(0, 8))
        ok = True
        for _ in range(length - 1):
            cand = [(heading + t) % 8 for t in (0, 0, 0, 1, -1, 1, -1)]
            rng.shuffle(cand)
            placed = False
            for h in cand:
                dx, dy = N8_RING[h]
                nx, ny = path[-1][0] + dx, path[-1][1] + dy
                if not (1 <= nx < size - 1 and 1 <= ny < size - 1):
                    continue
                # only the current head may be adjacent to the new pixel
                if any(max(abs(nx - px), abs(ny - py)) <= 1 for px, py in path[:-1]):
                    continue
                path.append((nx, ny))
                heading = h
                placed = True
                break
            if not placed:
                ok = False
                break
        if ok:
            return path
    raise RuntimeError("could not grow a simple path")


# clockwise ring starting north
N8_RING = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)]


def polyline_self_intersects_np(poly: np.ndarray) -> bool:
    """All non-adjacent segment pairs, vectorized orientation test (closed segments)."""
    a, b = poly[:-1], poly[1:]
    n = len(a)

    def orient(p, q, r):
        v = (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])
        eps = 1e-9 * (np.abs(poly).max() + 1.0) ** 2
        return np.sign(np.where(np.abs(v) <= eps, 0.0, v))

    P1, P2 = a[:, None], b[:, None]
    P3, P4 = a[None, :], b[None, :]
    o1, o2 = orient(P1, P2, P3), orient(P1, P2, P4)
    o3, o4 = orient(P3, P4, P1), orient(P3, P4, P2)
    proper = (o1 * o2 < 0) & (o3 * o4 < 0)
    # collinear touching is handled by the exact scalar check below
    touching = (o1 == 0) | (o2 == 0) | (o3 == 0) | (o4 == 0)
    i, j = np.triu_indices(n, k=2)
    if np.any(proper[i, j]):
        return True
    for ii, jj in zip(*np.nonzero(np.triu(touching, k=2))):
        if segments_cross(a[ii], b[ii], a[jj], b[jj]):
            return True
    return False


def zhang_suen_reference(mask: np.ndarray, b_min: int = 2) -> np.ndarray:
    """Textbook two-subiteration Zhang-Suen, pixel by pixel.

    ``b_min=3`` gives the Lu-Wang variant that keeps 2-pixel-thick diagonals.
    """
    img = np.pad(mask.astype(np.uint8), 1)
    h, w = img.shape

    def nbrs(y, x):
        # P2..P9: N, NE, E, SE, S, SW, W, NW
        return [img[y - 1, x], img[y - 1, x + 1], img[y, x + 1], img[y + 1, x + 1],
                img[y + 1, x], img[y + 1, x - 1], img[y, x - 1], img[y - 1, x - 1]]

    changed = True
    while changed:
        changed = False
        for step in (0, 1):
            kill = []
            for y in range(1, h - 1):
                for x in range(1, w - 1):
                    if not img[y, x]:
                        continue
                    p = nbrs(y, x)
                    b = sum(p)
                    a = sum(p[i] == 0 and p[(i + 1) % 8] == 1 for i in range(8))
                    p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
                    if step == 0:
                        c = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
                    else:
                        c = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
                    if b_min <= b <= 6 and a == 1 and c:
                        kill.append((y, x))
            for y, x in kill:
                img[y, x] = 0
            changed |= bool(kill)
    return img[1:-1, 1:-1].astype(bool)
