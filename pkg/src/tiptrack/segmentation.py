"""Segmentation backends and tiled inference.

Backends turn a :class:`Frame` into a :class:`ProbMap`. Two ship here: a
threshold-and-open classical segmenter and a ground-truth pass-through
oracle. Trained networks would plug in through the same ``segment`` call.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from PIL import Image

from .errors import InvalidArgument, MissingAnnotationError, PipelineError
from .imgproc import Frame, LabelMap, ProbMap, morphological_open

POLARITIES = ("dark_device", "bright_device")


class Segmenter:
    """Backend contract.

    ``thread_safe`` backends may see concurrent ``segment`` calls (tiles of
    one frame run in parallel); others are called single-flight.
    ``tileable`` is False for backends that only understand whole frames.
    """

    num_classes: int = 2
    thread_safe: bool = True
    tileable: bool = True

    def segment(self, frame: Frame) -> ProbMap:
        raise NotImplementedError


def classical_segment(
    frame: Frame,
    threshold: float = 128,
    polarity: str = "dark_device",
    open_radius: int = 1,
) -> ProbMap:
    if not 0 <= threshold <= 255:
        raise InvalidArgument("threshold must be in [0, 255]")
    if polarity not in POLARITIES:
        raise InvalidArgument(f"polarity must be one of {POLARITIES}")
    gray = frame.gray()
    fg = gray < threshold if polarity == "dark_device" else gray > threshold
    fg = morphological_open(fg, open_radius)
    probs = np.empty(fg.shape + (2,), dtype=np.float32)
    probs[..., 1] = fg
    probs[..., 0] = ~fg
    return ProbMap(probs)


class ClassicalSegmenter(Segmenter):
    num_classes = 2

    def __init__(self, threshold: float = 128, polarity: str = "dark_device", open_radius: int = 1):
        if polarity not in POLARITIES:
            raise InvalidArgument(f"polarity must be one of {POLARITIES}")
        self.threshold = threshold
        self.polarity = polarity
        self.open_radius = open_radius

    def segment(self, frame: Frame) -> ProbMap:
        return classical_segment(frame, self.threshold, self.polarity, self.open_radius)


def oracle_segment(frame: Frame, gt_mask_source: Mapping[int, LabelMap]) -> ProbMap:
    try:
        labels = gt_mask_source[frame.sequence_id]
    except KeyError:
        raise MissingAnnotationError(frame.sequence_id) from None
    return labels.to_probmap()


class OracleSegmenter(Segmenter):
    """Replays stored ground-truth masks, keyed by frame sequence id.

    With ``num_classes=2`` catheter and guidewire collapse into one
    instrument class. Masks are letterboxed to the frame when the
    preprocessor resized it.
    """

    tileable = False

    def __init__(self, store: Mapping[int, LabelMap], num_classes: int | None = None):
        self.store = store
        self._num_classes = num_classes

    @property
    def num_classes(self) -> int:
        return self._num_classes or 3

    def segment(self, frame: Frame) -> ProbMap:
        try:
            labels = self.store[frame.sequence_id]
        except KeyError:
            raise MissingAnnotationError(frame.sequence_id) from None
        arr = labels.labels
        n = self._num_classes or labels.num_classes
        if n == 2:
            arr = (arr > 0).astype(np.uint8)
        if arr.shape != (frame.height, frame.width):
            arr = Letterbox.fit(arr.shape[1], arr.shape[0], max(frame.width, frame.height)).apply(
                arr, nearest=True, fill=0
            )
        return LabelMap(arr, n).to_probmap()


# --------------------------------------------------------------------------
# Letterboxing


@dataclass(frozen=True)
class Letterbox:
    """Aspect-preserving resize into a square canvas of side ``target``."""

    src_w: int
    src_h: int
    target: int
    scale: float
    pad_x: int
    pad_y: int

    @classmethod
    def fit(cls, src_w: int, src_h: int, target: int) -> "Letterbox":
        scale = target / max(src_w, src_h)
        new_w, new_h = round(src_w * scale), round(src_h * scale)
        return cls(src_w, src_h, target, scale, (target - new_w) // 2, (target - new_h) // 2)

    def apply(self, arr: np.ndarray, nearest: bool = False, fill: int | None = None) -> np.ndarray:
        new_w, new_h = round(self.src_w * self.scale), round(self.src_h * self.scale)
        resample = Image.NEAREST if nearest else Image.BILINEAR
        resized = np.asarray(Image.fromarray(arr).resize((new_w, new_h), resample))
        if fill is None:
            fill = int(np.median(arr))
        out = np.full((self.target, self.target) + arr.shape[2:], fill, dtype=arr.dtype)
        out[self.pad_y:self.pad_y + new_h, self.pad_x:self.pad_x + new_w] = resized
        return out

    def to_source(self, p: tuple[int, int]) -> tuple[int, int]:
        x = (p[0] - self.pad_x + 0.5) / self.scale - 0.5
        y = (p[1] - self.pad_y + 0.5) / self.scale - 0.5
        return (
            int(np.clip(np.floor(x + 0.5), 0, self.src_w - 1)),
            int(np.clip(np.floor(y + 0.5), 0, self.src_h - 1)),
        )


# --------------------------------------------------------------------------
# Tiling


@dataclass(frozen=True)
class TileGrid:
    width: int
    height: int
    tile_size: int
    overlap: int
    origins: tuple[tuple[int, int], ...]

    @property
    def stride(self) -> int:
        return self.tile_size - self.overlap

    def boxes(self) -> list[tuple[int, int, int, int]]:
        """Half-open (x0, y0, x1, y1) for each tile, clipped to the image."""
        return [
            (x, y, min(x + self.tile_size, self.width), min(y + self.tile_size, self.height))
            for x, y in self.origins
        ]


def _axis_origins(size: int, tile: int, stride: int) -> list[int]:
    if size <= tile:
        return [0]
    origins = list(range(0, size - tile + 1, stride))
    if origins[-1] + tile < size:
        origins.append(size - tile)
    return origins


def plan_tiles(width: int, height: int, tile_size: int = 512, overlap: int = 256) -> TileGrid:
    """Tile origins at ``tile_size - overlap`` strides; the last tile per axis abuts the edge."""
    if width <= 0 or height <= 0:
        raise InvalidArgument("image dimensions must be positive")
    if not tile_size > overlap >= 0:
        raise InvalidArgument("need tile_size > overlap >= 0")
    stride = tile_size - overlap
    xs = _axis_origins(width, tile_size, stride)
    ys = _axis_origins(height, tile_size, stride)
    return TileGrid(width, height, tile_size, overlap, tuple((x, y) for y in ys for x in xs))


def worker_count(default: int | None = None) -> int:
    """Tile-inference threads, capped by ``TIPTRACK_THREADS`` when set."""
    n = default or (os.cpu_count() or 1)
    env = os.environ.get("TIPTRACK_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise InvalidArgument(f"TIPTRACK_THREADS must be an integer, got {env!r}") from None
    return max(1, n)


def sliding_window_infer(
    frame: Frame, backend: Segmenter, grid: TileGrid, max_workers: int | None = None
) -> ProbMap:
    """Average overlapping tile predictions in probability space, then renormalize."""
    if (grid.width, grid.height) != (frame.width, frame.height):
        raise InvalidArgument("tile grid does not match frame geometry")
    boxes = grid.boxes()

    def run(box):
        x0, y0, x1, y1 = box
        tile = Frame(frame.data[y0:y1, x0:x1], frame.sequence_id, frame.timestamp)
        pm = backend.segment(tile)
        if pm.probs.shape[:2] != (y1 - y0, x1 - x0):
            raise InvalidArgument(f"backend returned {pm.probs.shape[:2]} for tile {box}")
        return pm.probs

    workers = worker_count(max_workers) if backend.thread_safe else 1
    try:
        if workers > 1 and len(boxes) > 1:
            with ThreadPoolExecutor(max_workers=min(workers, len(boxes))) as pool:
                preds = list(pool.map(run, boxes))
        else:
            preds = [run(b) for b in boxes]
    except Exception as exc:
        raise PipelineError(
            f"inference failed on frame {frame.sequence_id}: {exc}", frame.sequence_id
        ) from exc

    total = np.zeros((frame.height, frame.width, preds[0].shape[2]), dtype=np.float64)
    count = np.zeros((frame.height, frame.width, 1), dtype=np.float64)
    for (x0, y0, x1, y1), probs in zip(boxes, preds):
        total[y0:y1, x0:x1] += probs
        count[y0:y1, x0:x1] += 1
    mean = total / count
    mean /= mean.sum(axis=2, keepdims=True)
    return ProbMap(mean.astype(np.float32))


def infer(
    frame: Frame,
    backend: Segmenter,
    tile_trigger: int = 1024,
    tile_size: int = 512,
    overlap: int = 256,
) -> ProbMap:
    """Whole-frame inference, switching to tiles for frames at least ``tile_trigger`` on both sides."""
    if backend.tileable and frame.width >= tile_trigger and frame.height >= tile_trigger:
        return sliding_window_infer(frame, backend, plan_tiles(frame.width, frame.height, tile_size, overlap))
    return backend.segment(frame)
