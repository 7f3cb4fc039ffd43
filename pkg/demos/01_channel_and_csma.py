"""Walk through one topology: path loss, carrier sensing and CTRM throughput."""
import numpy as np

from mloalloc import MloConfig, PhyParams, ScenarioSpec, ThroughputEngine, generate_topology, path_loss
from mloalloc.channel import FadingDraw, sample_fading
from mloalloc.csma import build_graph, enumerate_feasible_states, stationary_distribution

# %% Radio basics
params = PhyParams()
for fc in params.bands:
    print(f"path loss at 10 m, {fc / 1e9:g} GHz: {10 * np.log10(path_loss(fc, 10.0)):.1f} dB")

# %% Three APs on a triangle, two STAs each
topo = generate_topology(ScenarioSpec(area_m=10, stas_per_ap=(2, 2, 2)), seed=1)
print("AP positions:\n", np.round(topo.ap_positions, 2))
print("STA positions:\n", np.round(topo.sta_positions, 2))

# %% Every STA on every band: which pairs sense each other?
everything = [MloConfig(7)] * topo.n_stas
for band, fc in enumerate(params.bands):
    g = build_graph(topo, everything, band, params)
    fs = enumerate_feasible_states(g)
    print(f"{fc / 1e9:g} GHz: {len(g.edges)} conflict edges, {len(fs.states)} feasible states")

# %% Stationary law of the busiest band
g = build_graph(topo, everything, 0, params)
fs = enumerate_feasible_states(g)
ctrm = stationary_distribution(fs, 1.0)
top = np.argsort(ctrm.probabilities)[::-1][:5]
for i in top:
    print(f"state {fs.bitstrings()[i]}  p = {ctrm.probabilities[i]:.4f}")

# %% Throughput under unit fading and under one Rayleigh draw
engine = ThroughputEngine(topo, params)
alloc = [MloConfig(m) for m in (1, 2, 4, 6, 5, 3)]
per_sta, total = engine.throughput(alloc, FadingDraw.unit(topo, params))
print("per-STA Mbps (no fading):", np.round(per_sta, 1), "total", round(float(total), 1))
per_sta, total = engine.throughput(alloc, sample_fading(topo, np.random.default_rng(0), params))
print("per-STA Mbps (one fading draw):", np.round(per_sta, 1), "total", round(float(total), 1))
