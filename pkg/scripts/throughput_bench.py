"""End-to-end throughput and stage latency for both backends at several frame sizes.

Usage: python3 scripts/throughput_bench.py [--frames 120] [--sizes 256 500 1024]
"""
import argparse
import os

from tiptrack.io import ArraySource
from tiptrack.pipeline import measure_throughput, run_pipeline
from tiptrack.segmentation import ClassicalSegmenter, OracleSegmenter
from tiptrack.synth import gen_sequence


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=120)
    ap.add_argument("--sizes", type=int, nargs="+", default=[256, 500, 1024])
    args = ap.parse_args()
    print(f"cpus={os.cpu_count()}")
    print("size,backend,fps,pre_p50,pre_p95,infer_p50,infer_p95,post_p50,post_p95")
    for size in args.sizes:
        seq = gen_sequence(args.frames, seed=3, image_size=size, tube_width=5, preset="moderate")
        frames = [b.frame for b in seq]
        backends = {
            "oracle": OracleSegmenter({b.frame.sequence_id: b.gt_mask for b in seq}, 2),
            "classical": ClassicalSegmenter(),
        }
        for name, backend in backends.items():
            stats = run_pipeline(ArraySource(frames), backend)
            lat = stats.latency_ms
            cells = [f"{lat[s][q]:.2f}" for s in ("preprocess", "infer", "postprocess") for q in ("p50", "p95")]
            print(f"{size},{name},{measure_throughput(stats):.1f}," + ",".join(cells))


if __name__ == "__main__":
    main()
