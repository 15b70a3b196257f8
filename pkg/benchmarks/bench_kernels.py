#!/usr/bin/env python3
"""Benchmark the numba kernels against their numpy fallbacks.

Kernel timings are taken in-process (both variants are always importable).
The end-to-end pipeline is timed in subprocesses, one with
PRESEMI_DISABLE_NUMBA=1, since the active backend is fixed at import.

Usage:
    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --nodes 2000 20000 --dims 2 4
    python3 benchmarks/bench_kernels.py --output bench.json
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from presemi import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(m, n, rng):
    gamma = rng.standard_normal((m, n, n, n))
    v = rng.standard_normal((m, n))
    jac = rng.standard_normal((m, n, n)) + 3 * np.eye(n)
    jinv = np.linalg.inv(jac)
    hess = rng.standard_normal((m, n, n, n))
    vals = rng.standard_normal((m, 4 * n))
    return {
        "quadratic_form": ((gamma, v), _kernels.quadratic_form_numpy, _kernels.quadratic_form_numba),
        "transform_law": ((gamma, jac, jinv, hess), _kernels.transform_law_numpy,
                          _kernels.transform_law_numba),
        "cumtrapz": ((vals, 0.01), _kernels.cumtrapz_numpy, _kernels.cumtrapz_numba),
    }


PIPELINE = """
import time
from presemi.cli import RunConfig, run_pipeline
cfg = RunConfig("{fixture}", route="both", tau_count={tau_count})
run_pipeline(cfg)  # warm-up (JIT compile / cache load)
t = time.perf_counter()
for _ in range({repeat}):
    run_pipeline(cfg)
print((time.perf_counter() - t) / {repeat})
"""


def time_pipeline(fixture, tau_count, repeat, disable_numba):
    env = dict(os.environ, PRESEMI_DISABLE_NUMBA="1" if disable_numba else "0")
    code = PIPELINE.format(fixture=fixture, tau_count=tau_count, repeat=repeat)
    out = subprocess.run([sys.executable, "-c", code], env=env, check=True,
                         capture_output=True, text=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nodes", type=int, nargs="+", default=[1000, 10000, 100000])
    p.add_argument("--dims", type=int, nargs="+", default=[2, 3])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--fixtures", nargs="+", default=["sheared2", "sphere2", "flat3"])
    p.add_argument("--tau-count", type=int, default=161)
    p.add_argument("--skip-pipeline", action="store_true")
    p.add_argument("--output", help="write results as JSON")
    args = p.parse_args(argv)

    rng = np.random.default_rng(0)
    results = {"kernels": [], "pipeline": []}
    print(f"{'kernel':16s} {'n':>2s} {'nodes':>8s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s}")
    for n in args.dims:
        for m in args.nodes:
            for name, (inputs, f_np, f_nb) in kernel_cases(m, n, rng).items():
                f_nb(*inputs)  # compile outside the timing
                if not np.allclose(f_np(*inputs), f_nb(*inputs), rtol=1e-12, atol=1e-12):
                    raise SystemExit(f"{name}: numba and numpy results differ")
                t_np = best_of(lambda: f_np(*inputs), args.repeat)
                t_nb = best_of(lambda: f_nb(*inputs), args.repeat)
                print(f"{name:16s} {n:2d} {m:8d} {1e3 * t_np:11.3f} {1e3 * t_nb:11.3f} {t_np / t_nb:8.2f}")
                results["kernels"].append({"kernel": name, "n": n, "nodes": m,
                                           "numpy_s": t_np, "numba_s": t_nb})

    if not args.skip_pipeline:
        print(f"\n{'pipeline (both routes)':24s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s}")
        for fixture in args.fixtures:
            t_np = time_pipeline(fixture, args.tau_count, args.repeat, True)
            t_nb = time_pipeline(fixture, args.tau_count, args.repeat, False)
            print(f"{fixture:24s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:8.2f}")
            results["pipeline"].append({"fixture": fixture, "tau_count": args.tau_count,
                                        "numpy_s": t_np, "numba_s": t_nb})

    if args.output:
        with open(args.output, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
