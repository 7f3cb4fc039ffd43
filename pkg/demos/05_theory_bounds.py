"""Characteristic times, the layered sample-complexity sum, and measured stopping times."""
import math

import numpy as np

from mloalloc.bounds import GaussianInstance, bound_report, characteristic_time
from mloalloc.problem import TableEnv
from mloalloc.search import BaiParams, run_bai_mcts

# %% The two-arm case has a closed form: T = 2 / (gap + eps)^2
for gap in (1.0, 0.5, 0.25):
    r, T = characteristic_time(GaussianInstance([gap, 0.0]))
    print(f"gap {gap}: r* = {r:.6f}, T = {T:.6f}, closed form {2 / gap ** 2:.6f}")

# %% A 2x2 Gaussian tree: layer 0 sees the row means, layer 1 the best row
tree = [[0.9, 0.4], [0.5, 0.0]]
eps = 0.1
env = TableEnv(tree, noise="gaussian", sigma=1.0)
for delta in (0.1, 0.01, 1e-4):
    report = bound_report([np.mean(tree, axis=1), tree[0]], eps, delta)
    params = BaiParams(epsilon=eps, delta=delta, height=2, budget=10**6)
    stops = [run_bai_mcts(env, params, np.random.default_rng(k), track_expected=False).stop_slot
             for k in range(20)]
    print(f"delta={delta:g}: predicted {report.predicted_slots:7.0f} slots, measured mean {np.mean(stops):7.0f}, "
          f"ratio {np.mean(stops) / report.predicted_slots:.1f}")
print("the ratio shrinks as delta -> 0; the sum is an asymptotic rate, log(1/delta) =",
      f"{math.log(1 / 1e-4):.1f} at the smallest delta")
