"""Compiled vs pure-Python kernels: ray casting, rasterization, ADAM update.

    python3 benchmarks/bench_raycast.py [--repeats N]
"""

import argparse
import time

import numpy as np

from mmff import neural, raycast
from mmff.scene import SceneConfig, VehicleState, render_depth, render_grid


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    if raycast._compiled is None:
        raise SystemExit("compiled core not built; run `pip install -e . --no-build-isolation`")
    cfg = SceneConfig()
    state = VehicleState(80.0, cfg.lane_center(2), 14.0, 2)
    cases = {
        "render_depth (64x64 rays)": lambda b: render_depth(cfg, state, backend=b),
        "render_grid (64x64 cells)": lambda b: render_grid(cfg, state, backend=b),
    }
    print(f"{'kernel':<28} {'python ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for name, fn in cases.items():
        assert np.array_equal(fn("python"), fn("compiled"))
        tp = best_of(lambda: fn("python"), args.repeats)
        tc = best_of(lambda: fn("compiled"), args.repeats)
        print(f"{name:<28} {tp * 1e3:>10.2f} {tc * 1e3:>12.2f} {tp / tc:>7.1f}x")
    if neural._fused_adam is not None:
        rng = np.random.default_rng(0)
        # the two 4096x128 front-end weight matrices dominate the parameter count
        params = {k: rng.normal(size=(4096, 128)) for k in ("vfe", "dfe")}
        grads = {k: rng.normal(size=(4096, 128)) for k in params}
        state = neural.AdamState()
        tp = best_of(lambda: neural.adam_step(state, params, grads, fused=False), args.repeats)
        tc = best_of(lambda: neural.adam_step(state, params, grads, fused=True), args.repeats)
        print(f"{'adam_step (1.05M params)':<28} {tp * 1e3:>10.2f} {tc * 1e3:>12.2f} {tp / tc:>7.1f}x")


if __name__ == "__main__":
    main()
