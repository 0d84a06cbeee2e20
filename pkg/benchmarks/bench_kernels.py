"""Compare the compiled and numpy kernels, then the full-pipeline real-time factor.

    python benchmarks/bench_kernels.py [--duration 20] [--repeats 5]
"""
import argparse

from sicss import kernels
from sicss.bench import kernel_timings, run_benchmark
from sicss.pipeline import PipelineConfig


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--duration", type=float, default=20.0, help="seconds of synthetic meeting audio")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--estimator", default="baseline", choices=("baseline", "oracle"))
    args = p.parse_args()

    print(f"default backend: {kernels.BACKEND}; available: {', '.join(sorted(kernels.available_backends()))}")
    print("\ncACG log terms, 50 frames x 72 angles x 257 bins x 7 mics (best of %d)" % args.repeats)
    times = kernel_timings(repeats=args.repeats)
    base = times["python"]
    for name, sec in sorted(times.items()):
        print(f"  {name:8s} {1e3 * sec:8.2f} ms   {base / sec:5.2f}x vs python")

    print(f"\nfull pipeline, {args.duration:g} s meeting, estimator={args.estimator}")
    for r in run_benchmark(PipelineConfig(estimator=args.estimator), duration=args.duration):
        stages = ", ".join(f"{k} {v:.2f}" for k, v in r["stage_seconds"].items())
        print(f"  {r['backend']:8s} RTF {r['rtf']:.3f}  ({stages})")


if __name__ == "__main__":
    main()
