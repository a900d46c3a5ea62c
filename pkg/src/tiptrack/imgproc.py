"""Raster types and the pixel kernels shared by every other module.

Coordinates follow the raster convention: origin top-left, x to the right,
y downward. Arrays are indexed ``[y, x]``; public points are ``(x, y)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument

BACKGROUND, CATHETER, GUIDEWIRE = 0, 1, 2

_STRUCT = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def to_uint8(data: np.ndarray) -> np.ndarray:
    """Bring any integer or float raster into the 8-bit intensity domain."""
    data = np.asarray(data)
    if data.dtype == np.uint8:
        return data
    if data.dtype == bool:
        return data.astype(np.uint8) * 255
    if np.issubdtype(data.dtype, np.integer):
        top = np.iinfo(data.dtype).max
        if data.size and data.max() <= 255 and data.min() >= 0:
            return data.astype(np.uint8)
        return np.clip(np.round(data.astype(np.float64) * 255.0 / top), 0, 255).astype(np.uint8)
    # float input: [0,1] is treated as normalized, anything else is clipped
    data = data.astype(np.float64)
    if data.size and data.max() <= 1.0:
        data = data * 255.0
    return np.clip(np.round(data), 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class Frame:
    """A timestamped grayscale (H, W) or RGB (H, W, 3) 8-bit raster."""

    data: np.ndarray
    sequence_id: int = 0
    timestamp: int = 0  # monotonic nanoseconds

    def __post_init__(self):
        data = to_uint8(self.data)
        if data.ndim not in (2, 3) or (data.ndim == 3 and data.shape[2] not in (1, 3)):
            raise InvalidArgument(f"frame must be HxW or HxWx3, got shape {data.shape}")
        if data.ndim == 3 and data.shape[2] == 1:
            data = data[:, :, 0]
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    def gray(self) -> np.ndarray:
        if self.channels == 1:
            return self.data
        rgb = self.data.astype(np.float32)
        g = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
        return np.clip(np.round(g), 0, 255).astype(np.uint8)


@dataclass(frozen=True, eq=False)
class LabelMap:
    labels: np.ndarray
    num_classes: int = 3

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise InvalidArgument("label map must be 2-D")
        if self.num_classes not in (2, 3):
            raise InvalidArgument(f"num_classes must be 2 or 3, got {self.num_classes}")
        labels = labels.astype(np.uint8, copy=False)
        if labels.size and int(labels.max()) >= self.num_classes:
            raise InvalidArgument(
                f"label {int(labels.max())} out of range for {self.num_classes} classes"
            )
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(self.labels, other.labels)

    def to_probmap(self) -> "ProbMap":
        probs = np.zeros(self.labels.shape + (self.num_classes,), dtype=np.float32)
        np.put_along_axis(probs, self.labels[..., None].astype(np.intp), 1.0, axis=2)
        return ProbMap(probs)


@dataclass(frozen=True, eq=False)
class ProbMap:
    """Per-pixel class probabilities with shape (H, W, num_classes)."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float32)
        if probs.ndim != 3 or probs.shape[2] not in (2, 3):
            raise InvalidArgument(f"prob map must be HxWx{{2,3}}, got {probs.shape}")
        object.__setattr__(self, "probs", probs)

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    def is_normalized(self, tol: float = 1e-5) -> bool:
        return bool(np.all(np.abs(self.probs.sum(axis=2) - 1.0) <= tol))

    def argmax(self) -> LabelMap:
        return LabelMap(np.argmax(self.probs, axis=2).astype(np.uint8), self.num_classes)


@dataclass(frozen=True, eq=False)
class Component:
    """A connected pixel region. ``ys``/``xs`` are kept in raster order."""

    ys: np.ndarray
    xs: np.ndarray

    def __post_init__(self):
        ys = np.asarray(self.ys, dtype=np.intp)
        xs = np.asarray(self.xs, dtype=np.intp)
        if ys.shape != xs.shape or ys.ndim != 1 or ys.size == 0:
            raise InvalidArgument("component needs at least one pixel")
        order = np.lexsort((xs, ys))
        object.__setattr__(self, "ys", ys[order])
        object.__setattr__(self, "xs", xs[order])

    @classmethod
    def from_pixels(cls, pixels: Iterable[tuple[int, int]]) -> "Component":
        pts = np.array(sorted(set(pixels)), dtype=np.intp).reshape(-1, 2)
        return cls(pts[:, 1], pts[:, 0])

    @property
    def area(self) -> int:
        return int(self.ys.size)

    @cached_property
    def bbox(self) -> tuple[int, int, int, int]:
        return (int(self.xs.min()), int(self.ys.min()), int(self.xs.max()), int(self.ys.max()))

    @cached_property
    def centroid(self) -> tuple[float, float]:
        return (float(self.xs.mean()), float(self.ys.mean()))

    @cached_property
    def pixel_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(zip(self.xs.tolist(), self.ys.tolist()))

    def local_mask(self, pad: int = 1) -> tuple[np.ndarray, int, int]:
        """Boolean crop around the bbox; returns (mask, x_offset, y_offset)."""
        x0, y0, x1, y1 = self.bbox
        mask = np.zeros((y1 - y0 + 1 + 2 * pad, x1 - x0 + 1 + 2 * pad), dtype=bool)
        mask[self.ys - y0 + pad, self.xs - x0 + pad] = True
        return mask, x0 - pad, y0 - pad

    def sort_key(self) -> tuple[int, int]:
        return (self.bbox[1], self.bbox[0])

    def __repr__(self) -> str:
        return f"Component(area={self.area}, bbox={self.bbox})"


def union(components: Iterable[Component]) -> Component:
    comps = list(components)
    return Component(np.concatenate([c.ys for c in comps]), np.concatenate([c.xs for c in comps]))


def to_binary(labels: LabelMap, foreground_classes: Iterable[int]) -> np.ndarray:
    fg = sorted(set(foreground_classes))
    if not fg:
        raise InvalidArgument("foreground_classes must be non-empty")
    bad = [c for c in fg if c < 0 or c >= labels.num_classes]
    if bad:
        raise InvalidArgument(f"class ids {bad} out of range for {labels.num_classes} classes")
    return np.isin(labels.labels, fg)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[Component]:
    """Label the foreground of ``mask``; components ordered by bbox (y_min, x_min)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or 0 in mask.shape:
        raise InvalidArgument("mask must be a non-empty 2-D array")
    if connectivity not in _STRUCT:
        raise InvalidArgument(f"connectivity must be 4 or 8, got {connectivity}")
    labels, n = ndimage.label(mask, structure=_STRUCT[connectivity])
    if n == 0:
        return []
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    order = np.argsort(lab, kind="stable")
    bounds = np.searchsorted(lab[order], np.arange(1, n + 2))
    comps = [
        Component(ys[order[bounds[i]:bounds[i + 1]]], xs[order[bounds[i]:bounds[i + 1]]])
        for i in range(n)
    ]
    comps.sort(key=Component.sort_key)
    return comps


def morphological_open(mask: np.ndarray, radius: int) -> np.ndarray:
    """Erode then dilate with a (2r+1)-square; pixels outside the image count as background."""
    if radius < 0:
        raise InvalidArgument("radius must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    if radius == 0:
        return mask.copy()
    side = 2 * radius + 1
    eroded = ndimage.binary_erosion(mask, structure=np.ones((side, side), bool), border_value=0)
    return ndimage.binary_dilation(eroded, structure=np.ones((side, side), bool))
