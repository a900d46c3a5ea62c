"""Tip accuracy of the oracle and classical backends across presets and tube widths.

Usage: python3 scripts/accuracy_sweep.py [--frames 100] [--size 300] [--seed 7]
"""
import argparse
import collections

from tiptrack.io import ArraySource
from tiptrack.metrics import tip_errors
from tiptrack.pipeline import collect, run_pipeline
from tiptrack.segmentation import ClassicalSegmenter, OracleSegmenter
from tiptrack.synth import gen_sequence


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=100)
    ap.add_argument("--size", type=int, default=300)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    print("preset,width,backend,mae_x,mae_y,mae_xy,max_xy,n_invalid,methods")
    for preset in ("clean", "moderate", "heavy"):
        for width in (3, 5, 7):
            seq = gen_sequence(args.frames, seed=args.seed, image_size=args.size,
                               tube_width=width, preset=preset)
            gts = [b.gt_tips[1] for b in seq]
            backends = {
                "oracle": OracleSegmenter({b.frame.sequence_id: b.gt_mask for b in seq}, 2),
                "classical": ClassicalSegmenter(),
            }
            for name, backend in backends.items():
                res, _ = collect(run_pipeline, ArraySource([b.frame for b in seq]), backend)
                est = [r.tip_estimates[1] for r in res]
                methods = collections.Counter(e.method for e in est)
                try:
                    err = tip_errors(est, gts)
                except Exception as exc:  # all invalid
                    print(f"{preset},{width},{name},,,,,{len(est)},{exc}")
                    continue
                worst = max(((e.t0[0] - gx) ** 2 + (e.t0[1] - gy) ** 2) ** 0.5
                            for e, (gx, gy) in zip(est, gts) if e.valid)
                mstr = " ".join(f"{k}:{v}" for k, v in sorted(methods.items()))
                print(f"{preset},{width},{name},{err.mae_x:.3f},{err.mae_y:.3f},{err.mae_xy:.3f},"
                      f"{worst:.2f},{err.n_invalid},{mstr}")


if __name__ == "__main__":
    main()
