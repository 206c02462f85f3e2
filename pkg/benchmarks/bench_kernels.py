"""Time the hot kernels on the numba path and the pure-numpy path.

Each path runs in its own interpreter because the choice is fixed at import
time by ``SEMIDET_NUMBA``. Usage: ``python3 benchmarks/bench_kernels.py``.
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, timeit
import numpy as np
from semidet import _kernels as K
from semidet.geometry import grid_locations
from semidet.simworld import WorldConfig, build_dataset
from semidet.evaluation import evaluate_model, oracle_params
from semidet.trainer import TrainConfig, run_experiment

repeat = int(sys.argv[1])
rng = np.random.default_rng(0)
locs = grid_locations(64, 64)
xy = rng.uniform(0, 56, (8, 2)); wh = rng.uniform(4, 20, (8, 2))
boxes = np.concatenate([xy, xy + wh], 1)
det = rng.uniform(0, 50, (400, 2)); det = np.concatenate([det, det + rng.uniform(2, 10, (400, 2))], 1)
det_cls = rng.integers(0, 3, 400)
gt = det[::4] + rng.normal(0, 0.5, (100, 4)); gt_cls = det_cls[::4]
w = WorldConfig(n_scenes=40, n_test=40, label_fraction=0.25)
split = build_dataset(w)
cases = {
    "assign 4096 locations x 8 boxes": lambda: K.assign_locations(locs[:, 0], locs[:, 1], boxes, 1.5),
    "nms 400 boxes": lambda: K.nms_sorted(det, det_cls, 0.6),
    "greedy match 400 x 100": lambda: K.greedy_match(det, det_cls, gt, gt_cls, 0.5),
    "evaluate 40 scenes": lambda: evaluate_model(oracle_params(w), split.test),
    "train 50 iterations": lambda: run_experiment(TrainConfig(lr=0.005, burn_in_iters=30, mutual_iters=20), split, w),
}
for fn in cases.values():
    fn()  # warm-up includes numba compilation
out = {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in cases.items()}
print(json.dumps({"numba": K.USE_NUMBA, "seconds": out}))
"""


def run(flag, repeat):
    env = dict(os.environ, SEMIDET_NUMBA=flag)
    done = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True,
                          check=True)
    return json.loads(done.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5, help="best-of-N timing (default 5)")
    args = parser.parse_args()
    fast, slow = run("1", args.repeat), run("0", args.repeat)
    if not fast["numba"]:
        print("numba is not importable; both columns use numpy")
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, t_fast in fast["seconds"].items():
        t_slow = slow["seconds"][name]
        print(f"{name:34s} {1e3 * t_fast:10.2f} {1e3 * t_slow:10.2f} {t_slow / t_fast:8.1f}x")


if __name__ == "__main__":
    main()
