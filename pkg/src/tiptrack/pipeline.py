"""Four-stage tracking pipeline: reader -> preprocessor -> inference -> post-processor.

Each stage owns one thread; stages talk through bounded FIFO queues. In
offline mode every queue applies backpressure, so no frame is lost. In live
mode the reader never blocks: when the reader->preprocessor queue is full the
oldest queued frame is dropped.

``run_sequential`` applies the same stage functions one frame at a time and
is the reference the threaded run must reproduce exactly.
"""
from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import IngestError, InvalidArgument, PipelineError
from .imgproc import Frame, ProbMap
from .postprocess import PostprocessConfig, TipEstimate, extract_tips
from .segmentation import Letterbox, Segmenter, infer

STAGES = ("read", "preprocess", "infer", "postprocess")
MODES = ("offline", "live")
DROP_POLICIES = ("drop_oldest", "block")


@dataclass(frozen=True)
class PipelineConfig:
    queue_capacity: int = 8
    mode: str = "offline"
    live_drop_policy: str = "drop_oldest"
    target_size: int | None = None  # letterbox side; None keeps native resolution
    pixel_spacing_mm: float = 1.0
    tile_trigger: int = 1024
    tile_size: int = 512
    tile_overlap: int = 256

    def __post_init__(self):
        if self.queue_capacity < 1:
            raise InvalidArgument("queue_capacity must be >= 1")
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}")
        if self.live_drop_policy not in DROP_POLICIES:
            raise InvalidArgument(f"live_drop_policy must be one of {DROP_POLICIES}")
        if self.target_size is not None and self.target_size < 1:
            raise InvalidArgument("target_size must be positive")
        if not self.pixel_spacing_mm > 0:
            raise InvalidArgument("pixel_spacing_mm must be > 0")
        if not self.tile_size > self.tile_overlap >= 0:
            raise InvalidArgument("need tile_size > tile_overlap >= 0")
        if self.tile_trigger < 1:
            raise InvalidArgument("tile_trigger must be positive")


@dataclass(frozen=True)
class TrackingResult:
    frame_sequence_id: int
    tip_estimates: Mapping[int, TipEstimate]
    # timing fields never take part in equality
    stage_latencies: tuple[float, float, float, float] = field(default=(0.0,) * 4, compare=False)
    queue_waits: tuple[float, float, float] = field(default=(0.0,) * 3, compare=False)
    wall_timestamp: int = field(default=0, compare=False)


@dataclass
class PipelineStats:
    frames_in: int = 0
    frames_out: int = 0
    frames_dropped: int = 0
    wall_span_s: float = 0.0
    latency_ms: dict[str, dict[str, float]] = field(default_factory=dict)
    queue_wait_ms: dict[str, dict[str, float]] = field(default_factory=dict)
    max_queue_depth: tuple[int, ...] = ()

    @property
    def throughput_fps(self) -> float:
        return measure_throughput(self)

    def as_dict(self) -> dict:
        out = {
            "frames_in": self.frames_in,
            "frames_out": self.frames_out,
            "frames_dropped": self.frames_dropped,
            "wall_span_s": self.wall_span_s,
            "throughput_fps": self.throughput_fps if self.frames_out else None,
            "latency_ms": self.latency_ms,
            "queue_wait_ms": self.queue_wait_ms,
            "max_queue_depth": list(self.max_queue_depth),
        }
        return out


def measure_throughput(stats: PipelineStats) -> float:
    """Frames out per second of wall clock, first enqueue to last emit."""
    if stats.frames_out < 1:
        raise PipelineError("throughput undefined: no frames were emitted")
    if stats.wall_span_s <= 0:
        raise PipelineError("throughput undefined: zero wall-clock span")
    return stats.frames_out / stats.wall_span_s


def px_to_mm(p: tuple[float, float], spacing: float) -> tuple[float, float]:
    if not spacing > 0:
        raise InvalidArgument("spacing must be > 0")
    return (p[0] * spacing, p[1] * spacing)


def summarize(samples: Iterable[float]) -> dict[str, float]:
    arr = np.asarray(list(samples), dtype=np.float64)
    if arr.size == 0:
        return {"p50": 0.0, "p95": 0.0, "max": 0.0}
    return {
        "p50": float(np.percentile(arr, 50)),
        "p95": float(np.percentile(arr, 95)),
        "max": float(arr.max()),
    }


# --------------------------------------------------------------------------
# Stage functions


def preprocess(frame: Frame, cfg: PipelineConfig) -> tuple[Frame, Letterbox | None]:
    if cfg.target_size is None or (frame.width == frame.height == cfg.target_size):
        return frame, None
    box = Letterbox.fit(frame.width, frame.height, cfg.target_size)
    return Frame(box.apply(np.ascontiguousarray(frame.data)), frame.sequence_id, frame.timestamp), box


def run_inference(frame: Frame, backend: Segmenter, cfg: PipelineConfig) -> ProbMap:
    return infer(frame, backend, cfg.tile_trigger, cfg.tile_size, cfg.tile_overlap)


def postprocess(
    probs: ProbMap,
    pp: PostprocessConfig,
    previous: Mapping[int, TipEstimate] | None,
    sequence_id: int,
) -> dict[int, TipEstimate]:
    return extract_tips(probs, pp, previous, sequence_id)


def to_source_coords(estimates: Mapping[int, TipEstimate], box: Letterbox | None) -> dict[int, TipEstimate]:
    if box is None:
        return dict(estimates)
    out = {}
    for k, e in estimates.items():
        if not e.valid:
            out[k] = e
            continue
        out[k] = TipEstimate(box.to_source(e.t0), box.to_source(e.t1), box.to_source(e.t2),
                             box.to_source(e.base), e.method, e.frame_sequence_id, e.valid, e.class_id)
    return out


# --------------------------------------------------------------------------
# Queue


_END = object()


class BoundedQueue:
    """FIFO of at most ``capacity`` items; optionally drops the oldest instead of blocking."""

    def __init__(self, capacity: int, drop_oldest: bool = False):
        self.capacity = capacity
        self.drop_oldest = drop_oldest
        self._items: deque = deque()
        self._cond = threading.Condition()
        self.max_depth = 0
        self.dropped = 0

    def put(self, item, droppable: bool = True):
        """Enqueue ``item``; returns the evicted item when one was dropped."""
        evicted = None
        with self._cond:
            if self.drop_oldest and droppable:
                if len(self._items) >= self.capacity:
                    evicted = self._items.popleft()
                    self.dropped += 1
            else:
                while len(self._items) >= self.capacity:
                    self._cond.wait()
            self._items.append(item)
            self.max_depth = max(self.max_depth, len(self._items))
            self._cond.notify_all()
        return evicted

    def get(self):
        with self._cond:
            while not self._items:
                self._cond.wait()
            item = self._items.popleft()
            self._cond.notify_all()
            return item

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


@dataclass
class _Work:
    frame: Frame
    t_enqueued: list[float] = field(default_factory=list)
    t_dequeued: list[float] = field(default_factory=list)
    durations: list[float] = field(default_factory=list)
    box: Letterbox | None = None
    probs: ProbMap | None = None
    estimates: dict[int, TipEstimate] | None = None


# --------------------------------------------------------------------------
# Runners


def _emit(work: _Work, estimates, t_now_ns: int) -> TrackingResult:
    waits = tuple(
        (work.t_dequeued[i] - work.t_enqueued[i]) * 1e3 for i in range(len(work.t_dequeued))
    )
    return TrackingResult(
        work.frame.sequence_id,
        estimates,
        tuple(d * 1e3 for d in work.durations),
        waits,
        t_now_ns,
    )


def _finish_stats(results_timing, frames_in, frames_out, dropped, span, depths) -> PipelineStats:
    lat, waits = results_timing
    return PipelineStats(
        frames_in=frames_in,
        frames_out=frames_out,
        frames_dropped=dropped,
        wall_span_s=span,
        latency_ms={name: summarize(lat[i]) for i, name in enumerate(STAGES)},
        queue_wait_ms={name: summarize(waits[i]) for i, name in enumerate(STAGES[1:])},
        max_queue_depth=tuple(depths),
    )


def run_sequential(
    source: Iterable[Frame],
    backend: Segmenter,
    pp: PostprocessConfig | None = None,
    cfg: PipelineConfig | None = None,
    sink: Callable[[TrackingResult], None] | None = None,
) -> PipelineStats:
    """Apply the four stages to one frame at a time on the calling thread."""
    pp = pp or PostprocessConfig()
    cfg = cfg or PipelineConfig()
    lat = [[] for _ in STAGES]
    previous = None
    n = 0
    start = time.perf_counter()
    it = iter(source)
    last_id = None
    while True:
        t0 = time.perf_counter()
        try:
            frame = next(it)
        except StopIteration:
            break
        _check_order(last_id, frame.sequence_id)
        last_id = frame.sequence_id
        t1 = time.perf_counter()
        prepared, box = preprocess(frame, cfg)
        t2 = time.perf_counter()
        try:
            probs = run_inference(prepared, backend, cfg)
        except (PipelineError, IngestError):
            raise
        except Exception as exc:
            raise PipelineError(f"inference failed on frame {frame.sequence_id}: {exc}",
                                frame.sequence_id) from exc
        t3 = time.perf_counter()
        internal = postprocess(probs, pp, previous, frame.sequence_id)
        previous = internal
        t4 = time.perf_counter()
        for i, d in enumerate((t1 - t0, t2 - t1, t3 - t2, t4 - t3)):
            lat[i].append(d * 1e3)
        result = TrackingResult(frame.sequence_id, to_source_coords(internal, box),
                                tuple(x[-1] for x in lat), (0.0, 0.0, 0.0), time.monotonic_ns())
        n += 1
        if sink is not None:
            sink(result)
    span = time.perf_counter() - start
    return _finish_stats((lat, [[], [], []]), n, n, 0, span, (0, 0, 0))


def _check_order(last_id, seq_id):
    if last_id is not None and seq_id <= last_id:
        raise PipelineError(f"source sequence ids must increase: {seq_id} after {last_id}", seq_id)


def run_pipeline(
    source: Iterable[Frame],
    backend: Segmenter,
    pp: PostprocessConfig | None = None,
    cfg: PipelineConfig | None = None,
    sink: Callable[[TrackingResult], None] | None = None,
    stage_hook: Callable[[str, int], None] | None = None,
) -> PipelineStats:
    """Run the threaded pipeline to source exhaustion and return aggregate stats.

    ``sink`` receives results in increasing sequence-id order on the
    post-processing thread. ``stage_hook(stage, sequence_id)`` runs before each
    stage's work and is meant for tests that inject delays.
    """
    pp = pp or PostprocessConfig()
    cfg = cfg or PipelineConfig()
    live = cfg.mode == "live"
    drop_at_reader = live and cfg.live_drop_policy == "drop_oldest"
    queues = [
        BoundedQueue(cfg.queue_capacity, drop_oldest=drop_at_reader),
        BoundedQueue(cfg.queue_capacity),
        BoundedQueue(cfg.queue_capacity),
    ]
    abort = threading.Event()
    failure: list[tuple[int | None, BaseException]] = []
    fail_lock = threading.Lock()
    lat = [[] for _ in STAGES]
    waits = [[], [], []]
    counters = {"in": 0, "out": 0}
    clock = {"first": None, "last": None}
    fps_hint = getattr(source, "fps_hint", None)

    def fail(seq, exc):
        with fail_lock:
            if not failure:
                failure.append((seq, exc))
        abort.set()

    def hook(stage, seq):
        if stage_hook is not None:
            stage_hook(stage, seq)

    def reader():
        it = iter(source)
        last_id = None
        t_start = time.perf_counter()
        k = 0
        try:
            while not abort.is_set():
                if live and fps_hint:
                    due = t_start + k / fps_hint
                    delay = due - time.perf_counter()
                    if delay > 0:
                        time.sleep(delay)
                t0 = time.perf_counter()
                try:
                    frame = next(it)
                except StopIteration:
                    break
                _check_order(last_id, frame.sequence_id)
                last_id = frame.sequence_id
                hook("read", frame.sequence_id)
                work = _Work(frame)
                t1 = time.perf_counter()
                work.durations.append(t1 - t0)
                work.t_enqueued.append(t1)
                if clock["first"] is None:
                    clock["first"] = t1
                counters["in"] += 1
                k += 1
                queues[0].put(work)
        except BaseException as exc:  # noqa: BLE001 - reported after join
            fail(getattr(exc, "sequence_id", last_id), exc)
        finally:
            queues[0].put(_END, droppable=False)

    def stage(idx, name, fn):
        q_in = queues[idx]
        q_out = queues[idx + 1] if idx + 1 < len(queues) else None
        broken = False
        while True:
            work = q_in.get()
            if work is _END:
                break
            if broken or abort.is_set():
                continue  # drain so upstream never blocks
            work.t_dequeued.append(time.perf_counter())
            try:
                hook(name, work.frame.sequence_id)
                t0 = time.perf_counter()
                fn(work)
                t1 = time.perf_counter()
            except BaseException as exc:  # noqa: BLE001
                fail(work.frame.sequence_id, exc)
                broken = True
                continue
            work.durations.append(t1 - t0)
            if q_out is not None:
                work.t_enqueued.append(t1)
                q_out.put(work)
        if q_out is not None:
            q_out.put(_END)

    def do_preprocess(work):
        work.frame, work.box = preprocess(work.frame, cfg)

    def do_infer(work):
        work.probs = run_inference(work.frame, backend, cfg)

    state = {"previous": None}

    def do_post(work):
        internal = postprocess(work.probs, pp, state["previous"], work.frame.sequence_id)
        state["previous"] = internal
        work.probs = None
        work.estimates = to_source_coords(internal, work.box)

    def post_stage():
        q_in = queues[2]
        broken = False
        while True:
            work = q_in.get()
            if work is _END:
                break
            if broken or abort.is_set():
                continue
            work.t_dequeued.append(time.perf_counter())
            try:
                hook("postprocess", work.frame.sequence_id)
                t0 = time.perf_counter()
                do_post(work)
                t1 = time.perf_counter()
                work.durations.append(t1 - t0)
                result = _emit(work, work.estimates, time.monotonic_ns())
                for i, d in enumerate(result.stage_latencies):
                    lat[i].append(d)
                for i, w in enumerate(result.queue_waits):
                    waits[i].append(w)
                counters["out"] += 1
                if sink is not None:
                    sink(result)
                clock["last"] = time.perf_counter()
            except BaseException as exc:  # noqa: BLE001
                fail(work.frame.sequence_id, exc)
                broken = True

    threads = [
        threading.Thread(target=reader, name="tiptrack-reader", daemon=True),
        threading.Thread(target=stage, args=(0, "preprocess", do_preprocess), name="tiptrack-pre", daemon=True),
        threading.Thread(target=stage, args=(1, "infer", do_infer), name="tiptrack-infer", daemon=True),
        threading.Thread(target=post_stage, name="tiptrack-post", daemon=True),
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    if failure:
        seq, exc = failure[0]
        if isinstance(exc, (PipelineError, IngestError)):
            raise exc
        raise PipelineError(f"pipeline aborted at frame {seq}: {exc}", seq) from exc

    span = (clock["last"] - clock["first"]) if clock["first"] is not None and clock["last"] else 0.0
    return _finish_stats(
        (lat, waits), counters["in"], counters["out"], queues[0].dropped, span,
        [q.max_depth for q in queues],
    )


def collect(runner, *args, **kwargs) -> tuple[list[TrackingResult], PipelineStats]:
    """Run ``runner`` (``run_pipeline`` or ``run_sequential``) and gather its results."""
    results: list[TrackingResult] = []
    stats = runner(*args, sink=results.append, **kwargs)
    return results, stats
