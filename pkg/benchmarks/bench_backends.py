#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the fused loss/gradient pass and the AdamW update over the model sizes
a desk sweep actually visits, plus one full end-to-end training run per
backend. Run after `pip install -e . --no-build-isolation`:

    python benchmarks/bench_backends.py [--batch 256] [--repeats 200]
"""

import argparse
import time

import numpy as np

from ditscale.formulations import RectifiedFlow
from ditscale.netcore import (ModelConfig, OptimizerState, available_backends,
                              init, loss_and_grads_at, param_count)
from ditscale.trainer import TrainConfig, train

SIZES = [(1, 8), (1, 16), (2, 32), (3, 48), (4, 64), (5, 80)]


def time_call(fn, repeats):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(batch, repeats):
    rng = np.random.default_rng(0)
    sched = RectifiedFlow()
    backends = available_backends()
    names = [b.name for b in backends]
    print(f"fused loss+gradients, batch {batch} "
          f"(microseconds per call; speedup vs python)")
    header = f"{'model':>10} {'params':>8}" + "".join(f"{n:>12}" for n in names)
    print(header + ("" if len(backends) < 2 else f"{'speedup':>10}"))
    for depth, width in SIZES:
        cfg = ModelConfig(depth=depth, width=width)
        params = init(cfg, rng)
        x0 = rng.standard_normal((batch, 2))
        eps = rng.standard_normal((batch, 2))
        t = rng.random(batch) * 0.9 + 0.05
        cond = rng.integers(0, 5, batch)
        row = f"{f'd{depth}w{width}':>10} {param_count(cfg):>8}"
        times = []
        for be in backends:
            dt = time_call(lambda be=be: loss_and_grads_at(
                params, x0, cond, t, eps, sched, backend=be), repeats)
            times.append(dt)
            row += f"{dt * 1e6:>12.0f}"
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.2f}x"
        print(row)

    print(f"\nadamw update (microseconds per call)")
    for depth, width in SIZES[-1:]:
        cfg = ModelConfig(depth=depth, width=width)
        params = init(cfg, rng)
        grads = rng.standard_normal(params.flat.size)
        row = f"{f'd{depth}w{width}':>10} {param_count(cfg):>8}"
        for be in backends:
            state = OptimizerState.for_params(params)
            counter = iter(range(1, 10**9))
            dt = time_call(lambda be=be: be.adamw(
                params.flat, grads, state.m, state.v, next(counter),
                1e-4, 0.9, 0.95, 1e-15, 0.01), repeats)
            row += f"{dt * 1e6:>12.1f}"
        print(row)


def bench_training(batch):
    print(f"\nfull training run (budget 2e9, d2w32, batch {batch})")
    for be in available_backends():
        cfg = TrainConfig(budget_flops=2e9, model=ModelConfig(depth=2, width=32),
                          batch_size=batch, seed=3)
        t0 = time.perf_counter()
        record, _ = train(cfg, "bench", backend=be)
        wall = time.perf_counter() - t0
        print(f"{be.name:>10}: {record.steps} steps in {wall:.2f}s "
              f"({wall / record.steps * 1e6:.0f} us/step), "
              f"final EMA loss {record.final_ema_loss:.4f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()
    names = [b.name for b in available_backends()]
    print(f"available backends: {', '.join(names)}")
    if len(names) < 2:
        print("note: compiled backend not built; showing python only")
    bench_kernels(args.batch, args.repeats)
    bench_training(args.batch)


if __name__ == "__main__":
    main()
