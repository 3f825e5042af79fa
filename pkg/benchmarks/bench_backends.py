"""Benchmark the compiled substep kernel against the pure-numpy fallback.

Usage: python3 benchmarks/bench_backends.py [--steps 200]

Measures the batched one-control-step kernel (the hot loop of rollouts,
dataset generation, and annealing replays) across batch sizes. Closed-loop
rollouts call the kernel with a batch of one state per control step, where
per-call overhead dominates; dataset generation uses large batches, where
numpy's vectorized tanh is competitive.

Correctness is cross-checked after a single call. Repeated steps are not
compared bit-for-bit: the stiff PD dynamics amplify the one-ulp difference
between libm's and numpy's tanh exponentially.
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from armcal import backend  # noqa: E402
from armcal.plant import PlantConfig  # noqa: E402


def make_inputs(batch, rng):
    n = 2
    q = rng.uniform(-1.0, 1.0, (batch, n))
    qd = rng.uniform(-0.5, 0.5, (batch, n))
    target = rng.uniform(-np.pi, np.pi, (batch, n))
    f = rng.uniform(0.0, 10.0, batch)
    p = rng.uniform(1.0, 500.0, batch)
    d = rng.uniform(0.1, 50.0, batch)
    return q, qd, target, f, p, d


def time_kernel(kernel, inputs, cfg, steps):
    q, qd, target, f, p, d = [np.ascontiguousarray(x.copy()) for x in inputs]
    inv_i = cfg.inv_inertia()
    t0 = time.perf_counter()
    for _ in range(steps):
        kernel.substep_batch(q, qd, target, f, p, d, inv_i, cfg.dt,
                             cfg.substeps_per_action, cfg.friction_smoothing)
    return (time.perf_counter() - t0) / steps


def single_call(kernel, inputs, cfg):
    q, qd, target, f, p, d = [np.ascontiguousarray(x.copy()) for x in inputs]
    kernel.substep_batch(q, qd, target, f, p, d, cfg.inv_inertia(), cfg.dt,
                         cfg.substeps_per_action, cfg.friction_smoothing)
    return q, qd


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = PlantConfig()
    rng = np.random.default_rng(args.seed)

    if not backend.has_compiled():
        print("compiled backend unavailable; nothing to compare")
        return 0
    py = backend.get_kernel("python")
    cy = backend.get_kernel("compiled")

    print(f"{'batch':>8} {'python':>12} {'compiled':>12} {'speedup':>8}")
    for batch in (1, 8, 64, 512, 4096):
        inputs = make_inputs(batch, rng)
        tp = time_kernel(py, inputs, cfg, args.steps)
        tc = time_kernel(cy, inputs, cfg, args.steps)
        print(f"{batch:>8} {tp * 1e6:>10.1f}us {tc * 1e6:>10.1f}us "
              f"{tp / tc:>7.1f}x")

    inputs = make_inputs(1024, rng)
    qp, qdp = single_call(py, inputs, cfg)
    qc, qdc = single_call(cy, inputs, cfg)
    dq = float(np.max(np.abs(qp - qc)))
    dqd = float(np.max(np.abs(qdp - qdc)))
    print(f"single-call max deviation: q {dq:.3e}, qd {dqd:.3e}")
    if dq > 1e-9 or dqd > 1e-9:
        print("WARNING: backends disagree beyond one-call tolerance")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
