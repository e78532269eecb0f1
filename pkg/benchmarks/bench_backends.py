"""Rollout throughput of the compiled kernel against the numpy fallback.

Times one planner iteration (``rollout_costs`` over N sampled control
sequences) on the built-in stress scenario for both vehicle models.

    python benchmarks/bench_backends.py --samples 64 256 1024 --repeat 3
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from tmpc import backend
from tmpc import dynamics as dyn
from tmpc._layout import pack_cost
from tmpc.harness import planner_state
from tmpc.planner import sample_controls
from tmpc.scenario import builtin


def best_of(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(model, n, repeat, workers, names):
    sc = builtin("stress", model=model)
    cfg = sc.planner.replace(n_samples=n)
    terrain = sc.lod(model)
    x, y, psi, speed = sc.start
    s0 = planner_state(model, dyn.srb_rest_state(terrain, x, y, psi, speed, sc.vehicle))
    samples = sample_controls(cfg)
    cost_vec = pack_cost(model, cfg.weights, sc.goal, cfg.constraints, sc.vehicle)
    out = {}
    for name in names:
        impl = backend.get(name)

        def call():
            return impl.rollout_costs(model, s0, samples, terrain, sc.sdist, sc.vehicle, sc.tires, cost_vec,
                                      cfg.dt_zoh, cfg.dt_int, workers=workers)

        out[name] = (best_of(call, repeat), call()[0])
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, nargs="+", default=[64, 256, 1024])
    ap.add_argument("--models", nargs="+", default=["est", "srb"], choices=["est", "srb"])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)

    names = sorted(backend.AVAILABLE)
    print(f"backends: {', '.join(names)}  workers={args.workers}")
    print(f"{'model':>5} {'N':>6} " + " ".join(f"{n + ' [s]':>12} {'rollouts/s':>11}" for n in names)
          + ("  speedup  max rel dcost" if len(names) == 2 else ""))
    for model in args.models:
        for n in args.samples:
            res = bench(model, n, args.repeat, args.workers, names)
            line = f"{model:>5} {n:6d} " + " ".join(f"{res[k][0]:12.4f} {n / res[k][0]:11.0f}" for k in names)
            if len(names) == 2:
                (ta, ca), (tb, cb) = res["python"], res["cython"]
                both = np.isfinite(ca) & np.isfinite(cb)
                diff = float(np.max(np.abs(ca[both] - cb[both]) / np.abs(cb[both]))) if both.any() else float("nan")
                line += f"  {ta / tb:7.1f}x  {diff:.2e}"
            print(line)


if __name__ == "__main__":
    main()
