"""Frame sources, mask and annotation files, and the flat config format."""
from __future__ import annotations

import csv
import dataclasses
import os
import typing
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator

import numpy as np
from PIL import Image

from .errors import ConfigError, IngestError, InvalidArgument, MissingAnnotationError
from .imgproc import Frame, LabelMap
from .pipeline import PipelineConfig
from .postprocess import PostprocessConfig, TipEstimate

TIPS_HEADER = ["frame_id", "class_id", "t0_x", "t0_y", "t1_x", "t1_y", "t2_x", "t2_y", "valid"]
RAW_MAGIC = "RAWV1"


# --------------------------------------------------------------------------
# PNG helpers


def read_png(path: str | os.PathLike) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im).astype(np.uint16)
            elif im.mode == "RGBA":
                arr = np.asarray(im.convert("RGB"))
            else:
                arr = np.asarray(im.convert("L"))
    except (OSError, ValueError) as exc:
        raise IngestError(f"cannot read image {path}: {exc}") from exc
    return arr


def write_png(path: str | os.PathLike, arr: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(arr)).save(path, format="PNG")


def frame_name(sequence_id: int) -> str:
    return f"{sequence_id:06d}.png"


# --------------------------------------------------------------------------
# Frame sources


class FrameSource:
    """Iterable of frames numbered 0, 1, 2, ... for one reader thread."""

    kind = "abstract"
    fps_hint: float | None = None
    width: int = 0
    height: int = 0
    channels: int = 1

    def __iter__(self) -> Iterator[Frame]:
        raise NotImplementedError


class ArraySource(FrameSource):
    kind = "memory"

    def __init__(self, frames, fps_hint: float | None = None, loops: int = 1):
        self.frames = [f if isinstance(f, Frame) else Frame(f) for f in frames]
        if not self.frames:
            raise IngestError("no frames")
        self.fps_hint = fps_hint
        self.loops = loops
        self.height, self.width = self.frames[0].height, self.frames[0].width
        self.channels = self.frames[0].channels

    def __len__(self) -> int:
        return len(self.frames) * self.loops

    def __iter__(self) -> Iterator[Frame]:
        n = 0
        for _ in range(self.loops):
            for f in self.frames:
                yield Frame(f.data, n, n)
                n += 1


class ImageDirSource(FrameSource):
    """Images in a directory, sorted by raw file-name bytes."""

    kind = "image_dir"

    def __init__(self, path: str | os.PathLike, pattern: str = "*.png", fps_hint: float | None = None,
                 loops: int = 1):
        self.path = Path(path)
        if not self.path.is_dir():
            raise IngestError(f"not a directory: {self.path}")
        self.files = sorted(self.path.glob(pattern), key=lambda p: os.fsencode(p.name))
        if not self.files:
            raise IngestError(f"no files matching {pattern!r} in {self.path}")
        self.fps_hint = fps_hint
        self.loops = loops
        geometry = None
        for f in self.files:
            try:
                with Image.open(f) as im:
                    geo = (im.size, len(im.getbands()) if im.mode != "RGBA" else 3)
            except OSError as exc:
                raise IngestError(f"unreadable image {f}: {exc}") from exc
            if geometry is None:
                geometry = geo
            elif geo != geometry:
                raise IngestError(
                    f"{f.name}: geometry {geo[0][0]}x{geo[0][1]}x{geo[1]} differs from "
                    f"{geometry[0][0]}x{geometry[0][1]}x{geometry[1]}"
                )
        (self.width, self.height), self.channels = geometry

    def __len__(self) -> int:
        return len(self.files) * self.loops

    def __iter__(self) -> Iterator[Frame]:
        n = 0
        for _ in range(self.loops):
            for f in self.files:
                yield Frame(read_png(f), n, n)
                n += 1


def open_image_dir(path, pattern: str = "*.png", fps_hint: float | None = None) -> ImageDirSource:
    return ImageDirSource(path, pattern, fps_hint)


class RawStreamSource(FrameSource):
    """``RAWV1 <width> <height> <channels>\\n`` followed by concatenated 8-bit frames."""

    kind = "raw_stream"

    def __init__(self, stream: str | os.PathLike | BinaryIO, fps_hint: float | None = None):
        self._owned = not hasattr(stream, "read")
        self._fh = open(stream, "rb") if self._owned else stream
        header = self._fh.readline().decode("ascii", errors="replace").split()
        if len(header) != 4 or header[0] != RAW_MAGIC:
            raise IngestError(f"bad raw stream header: {' '.join(header)!r}")
        try:
            self.width, self.height, self.channels = (int(v) for v in header[1:])
        except ValueError:
            raise IngestError(f"bad raw stream geometry: {header[1:]}") from None
        if self.channels not in (1, 3) or self.width < 1 or self.height < 1:
            raise IngestError(f"unsupported raw geometry {header[1:]}")
        self.fps_hint = fps_hint

    def __iter__(self) -> Iterator[Frame]:
        size = self.width * self.height * self.channels
        shape = (self.height, self.width) if self.channels == 1 else (self.height, self.width, 3)
        n = 0
        try:
            while True:
                buf = self._fh.read(size)
                if not buf:
                    return
                if len(buf) != size:
                    raise IngestError(f"truncated raw frame {n}: {len(buf)} of {size} bytes")
                yield Frame(np.frombuffer(buf, dtype=np.uint8).reshape(shape), n, n)
                n += 1
        finally:
            if self._owned:
                self._fh.close()


def write_raw_stream(frames, fh: BinaryIO) -> None:
    frames = [f if isinstance(f, Frame) else Frame(f) for f in frames]
    h, w, c = frames[0].height, frames[0].width, frames[0].channels
    fh.write(f"{RAW_MAGIC} {w} {h} {c}\n".encode("ascii"))
    for f in frames:
        if (f.height, f.width, f.channels) != (h, w, c):
            raise InvalidArgument("all frames in a raw stream must share geometry")
        fh.write(np.ascontiguousarray(f.data).tobytes())


# --------------------------------------------------------------------------
# Masks


class MaskDirStore(Mapping):
    """Lazy ``sequence_id -> LabelMap`` view over ``<id:06d>.png`` label images."""

    def __init__(self, path: str | os.PathLike, num_classes: int = 3):
        self.path = Path(path)
        if not self.path.is_dir():
            raise IngestError(f"mask directory not found: {self.path}")
        self.num_classes = num_classes

    def __getitem__(self, sequence_id: int) -> LabelMap:
        f = self.path / frame_name(sequence_id)
        if not f.exists():
            raise MissingAnnotationError(sequence_id)
        arr = read_png(f)
        if arr.ndim != 2:
            raise IngestError(f"{f}: masks must be single-channel")
        try:
            return LabelMap(arr, self.num_classes)
        except InvalidArgument as exc:
            raise IngestError(f"{f}: {exc}") from exc

    def __iter__(self):
        for f in sorted(self.path.glob("*.png"), key=lambda p: os.fsencode(p.name)):
            if f.stem.isdigit():
                yield int(f.stem)

    def __len__(self) -> int:
        return sum(1 for _ in self)


def write_mask(path: str | os.PathLike, labels: LabelMap) -> None:
    write_png(path, labels.labels)


# --------------------------------------------------------------------------
# Tip annotations


@dataclass(frozen=True)
class TipAnnotationRow:
    frame_id: int
    class_id: int
    t0_x: float
    t0_y: float
    t1_x: float
    t1_y: float
    t2_x: float
    t2_y: float
    valid: bool = True

    @classmethod
    def from_estimate(cls, est: TipEstimate, frame_id: int | None = None) -> "TipAnnotationRow":
        fid = est.frame_sequence_id if frame_id is None else frame_id
        if not est.valid:
            return cls(fid, est.class_id, -1, -1, -1, -1, -1, -1, False)
        (a, b), (c, d), (e, f) = est.t0, est.t1, est.t2
        return cls(fid, est.class_id, a, b, c, d, e, f, True)

    @property
    def t0(self) -> tuple[float, float]:
        return (self.t0_x, self.t0_y)

    def to_estimate(self) -> TipEstimate:
        if not self.valid:
            return TipEstimate.degenerate(self.frame_id, self.class_id)
        pt = lambda x, y: (int(round(x)), int(round(y)))  # noqa: E731
        t0 = pt(self.t0_x, self.t0_y)
        return TipEstimate(t0, pt(self.t1_x, self.t1_y), pt(self.t2_x, self.t2_y), t0,
                           "skeleton", self.frame_id, True, self.class_id)


def write_tips_csv(rows, path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TIPS_HEADER)
        for r in rows:
            w.writerow([
                r.frame_id, r.class_id,
                *(f"{v:.2f}" for v in (r.t0_x, r.t0_y, r.t1_x, r.t1_y, r.t2_x, r.t2_y)),
                "true" if r.valid else "false",
            ])


def read_tips_csv(path: str | os.PathLike) -> list[TipAnnotationRow]:
    if not Path(path).is_file():
        raise IngestError(f"{path}: no such tips file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TIPS_HEADER:
            raise IngestError(f"{path}: line 1: expected header {','.join(TIPS_HEADER)}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(TIPS_HEADER):
                raise IngestError(f"{path}: line {lineno}: expected {len(TIPS_HEADER)} fields, got {len(rec)}")
            try:
                valid = {"true": True, "false": False, "1": True, "0": False}[rec[8].strip().lower()]
                rows.append(TipAnnotationRow(int(rec[0]), int(rec[1]), *(float(v) for v in rec[2:8]), valid))
            except (ValueError, KeyError) as exc:
                raise IngestError(f"{path}: line {lineno}: {exc}") from None
    return rows


# --------------------------------------------------------------------------
# Config


@dataclass(frozen=True)
class BackendConfig:
    name: str = "oracle"
    classes: int = 2
    threshold: float = 128.0
    polarity: str = "dark_device"
    open_radius: int = 1

    def __post_init__(self):
        if self.name not in ("oracle", "classical"):
            raise InvalidArgument("backend must be 'oracle' or 'classical'")
        if self.classes not in (2, 3):
            raise InvalidArgument("classes must be 2 or 3")
        if not 0 <= self.threshold <= 255:
            raise InvalidArgument("threshold must be in [0, 255]")
        if self.polarity not in ("dark_device", "bright_device"):
            raise InvalidArgument("polarity must be dark_device or bright_device")
        if self.open_radius < 0:
            raise InvalidArgument("open_radius must be >= 0")


@dataclass(frozen=True)
class TrackerConfig:
    pipeline: PipelineConfig = PipelineConfig()
    postprocess: PostprocessConfig = PostprocessConfig()
    backend: BackendConfig = BackendConfig()

    def echo(self) -> dict[str, object]:
        """Resolved settings as flat ``section.key`` pairs."""
        out = {}
        for section in ("pipeline", "postprocess", "backend"):
            for k, v in dataclasses.asdict(getattr(self, section)).items():
                out[f"{section}.{k}"] = v
        return out


_SECTIONS = {"pipeline": PipelineConfig, "postprocess": PostprocessConfig, "backend": BackendConfig}


def _coerce(raw: str, tp, key: str):
    raw = raw.strip()
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        raw = raw[1:-1]
    args = typing.get_args(tp)
    if type(None) in args:
        if raw.lower() in ("none", "null", ""):
            return None
        tp = next(a for a in args if a is not type(None))
    try:
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is bool:
            return {"true": True, "false": False}[raw.lower()]
    except (ValueError, KeyError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {tp.__name__}") from None
    return raw


def parse_config(text: str, source: str = "<config>") -> TrackerConfig:
    overrides: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        section, _, name = key.partition(".")
        cls = _SECTIONS.get(section)
        if cls is None or not name:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        hints = typing.get_type_hints(cls)
        if name not in hints:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        overrides[section][name] = _coerce(value, hints[name], key)
    built = {}
    for section, cls in _SECTIONS.items():
        try:
            built[section] = cls(**overrides[section])
        except (InvalidArgument, TypeError) as exc:
            culprits = []
            for name, value in overrides[section].items():
                try:
                    cls(**{name: value})
                except (InvalidArgument, TypeError):
                    culprits.append(f"{section}.{name} = {value!r}")
            keys = culprits or [f"{section}.{k}" for k in overrides[section]]
            raise ConfigError(f"{', '.join(keys)}: {exc}") from None
    return TrackerConfig(**built)


def load_config(path: str | os.PathLike | None) -> TrackerConfig:
    if path is None:
        return TrackerConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))
