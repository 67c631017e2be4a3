"""Time every kernel on each available backend, then a short DQN run per backend.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tinlab.kernels import available_backends


def kernel_cases(rng):
    x = rng.normal(size=(32, 52))
    x1 = x[:1].copy()
    w1 = rng.normal(size=(26, 52))
    w2 = rng.normal(size=(3, 26))
    actions = rng.integers(0, 3, 32)
    targets = rng.normal(size=32)
    series = rng.normal(size=(266, 34))
    g = rng.normal(size=(26, 52))
    m, v = np.zeros_like(g), np.zeros_like(g)
    w = w1.copy()
    return {
        "sliding_extrema (266x34, k=26)": lambda k: k.sliding_extrema(series, 26, True),
        "qnet_forward (1x52 -> 26 -> 3)": lambda k: k.qnet_forward(x1, w1, w2, False),
        "qnet_forward (32x52 -> 26 -> 3)": lambda k: k.qnet_forward(x, w1, w2, False),
        "qnet_loss_grad (batch 32)": lambda k: k.qnet_loss_grad(x, actions, targets, w1, w2, False),
        "adam_update (26x52)": lambda k: k.adam_update(w.reshape(-1), g.reshape(-1), m.reshape(-1),
                                                       v.reshape(-1), 10, 1e-3, 0.9, 0.999, 1e-8),
    }


TRAIN_SNIPPET = """
import time
from tinlab import kernels
from tinlab.data import synthetic_bars, to_feature_matrix
from tinlab.dqn import DqnConfig, qnet_spec_for, train
from tinlab.env import EnvConfig
fm = to_feature_matrix(synthetic_bars("sine", 552), ["price"])
env = EnvConfig()
t = time.perf_counter()
train(fm, env, DqnConfig(episodes=5, seed=0), qnet_spec_for(fm, env))
print(f"{kernels.BACKEND:<8}{time.perf_counter() - t:.3f}")
"""


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=2000, help="calls per timing")
    args = ap.parse_args(argv)
    backends = available_backends()
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    names = sorted(backends)
    print(f"{'kernel':<36}" + "".join(f"{n + ' (us)':>16}" for n in names) + f"{'speedup':>10}")
    for label, fn in cases.items():
        times = {}
        for n in names:
            mod = backends[n]
            times[n] = min(timeit.repeat(lambda: fn(mod), number=args.repeat, repeat=3)) / args.repeat * 1e6
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{label:<36}" + "".join(f"{times[n]:>16.2f}" for n in names) + f"{speed:>10.2f}")

    print("\nDQN training, 5 episodes on a 552-day sine series (seconds):")
    for n in names:
        env = dict(os.environ, TINLAB_PURE_PYTHON="1" if n == "python" else "0")
        out = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env, capture_output=True, text=True)
        print("  " + (out.stdout.strip() or out.stderr.strip()))


if __name__ == "__main__":
    main()
