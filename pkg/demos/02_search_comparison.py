"""BAI-MCTS against UCT, DNG-MCTS and random selection on the six-STA network.

A handful of replications are enough to see the shape of the curves; the
acceptance suite runs the full 50.
"""
import sys

import numpy as np

from mloalloc.experiments import arm_histogram, preset, run_campaign

reps = int(sys.argv[1]) if len(sys.argv) > 1 else 5
cfg = preset("fig9", replications=reps, output_dir="demo_results")
result = run_campaign(cfg)
oracle = result.summary["oracle"][0]
print(f"oracle arm {[a + 1 for a in oracle['arm']]}: {oracle['value_mbps']:.1f} Mbps "
      f"(normalized {oracle['normalized']:.4f})")

# %% Recommended value over time, averaged over replications
checkpoints = [50, 200, 500, 1000, 2000]
print("slot      " + "".join(f"{c:>9}" for c in checkpoints))
for alg, traces in result.traces.items():
    curve = np.mean([tr.recommended for tr in traces], axis=0)
    print(f"{alg:<10}" + "".join(f"{curve[c - 1] / oracle['normalized']:>9.3f}" for c in checkpoints))

# %% Slots needed to reach 98% of the optimum
for alg, s in result.summary["algorithms"].items():
    print(f"{alg:<10} median slots {s['median_convergence_slot']:.0f}, censored {s['censored_runs']}/{reps}")

# %% Which configurations did BAI-MCTS play per STA?
hist = arm_histogram(result.traces["bai-mcts"], (7,) * 6)
for sta, row in enumerate(hist):
    print(f"STA{sta + 1}: " + " ".join(f"{100 * v:5.1f}" for v in row))
