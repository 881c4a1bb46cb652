"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both implementations are called directly, so the result does not depend on
KITCHENPLAN_BACKEND. Numba compile time is excluded by a warm-up call.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from kitchenplan import _accel
from kitchenplan.env import load_layout


def cases(rng: np.random.Generator):
    layout = load_layout("forced_coordination_v1")
    passable = layout.floor.copy()
    sources = np.array([[1, 2]])
    # one PPO minibatch worth of grounded maps: (B, H, W, 2*DIM)
    x = rng.normal(size=(64, layout.height, layout.width, 32))
    k = rng.normal(size=(3, 3, 32))
    g = rng.normal(size=(64, layout.height, layout.width))
    return [
        ("bfs", (passable, sources), _accel.bfs_distances_numpy, "_bfs_distances_numba"),
        ("conv3x3 forward", (x, k, 0.0), _accel.conv3x3_forward_numpy, "_conv3x3_forward_numba"),
        ("conv3x3 backward", (x, k, g), _accel.conv3x3_backward_numpy, "_conv3x3_backward_numba"),
    ]


def per_call_us(fn, args, repeat: int) -> float:
    fn(*args)
    number = max(1, repeat)
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=5)) / number * 1e6


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"active backend: {_accel.BACKEND}")
    print(f"{'kernel':<18} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for name, call_args, np_fn, nb_name in cases(rng):
        t_np = per_call_us(np_fn, call_args, args.repeat)
        if _accel.HAVE_NUMBA:
            nb_fn = getattr(_accel, nb_name)
            if name == "bfs":
                call_args = (np.ascontiguousarray(call_args[0], dtype=np.bool_), call_args[1].astype(np.int64))
            t_nb = per_call_us(nb_fn, call_args, args.repeat)
            print(f"{name:<18} {t_np:>10.1f} {t_nb:>10.1f} {t_np / t_nb:>7.1f}x")
        else:
            print(f"{name:<18} {t_np:>10.1f} {'n/a':>10} {'':>8}")


if __name__ == "__main__":
    main()
