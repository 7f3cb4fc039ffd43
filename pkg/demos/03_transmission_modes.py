"""Total throughput of SLO, two-band bonding and STR as the network grows."""
import sys

from mloalloc.experiments import mode_sweep, paired_margins, preset, sweep_to_csv

topologies = int(sys.argv[1]) if len(sys.argv) > 1 else 8
cfg = preset("fig11", budget=1000)
rows = mode_sweep(cfg, (2, 4, 6), ("SLO", "bonding", "STR"), topologies=topologies)
print(sweep_to_csv(rows))

# %% Paired differences over the shared topologies
for better, worse in (("STR", "bonding"), ("bonding", "SLO")):
    for n, (m, se) in paired_margins(rows, better, worse).items():
        print(f"N={n}: {better} - {worse} = {m:6.1f} Mbps (se {se:.1f})")

# %% Contention: per-STA throughput under STR
for r in rows:
    if r.mode == "STR":
        print(f"N={r.n_stas}: {r.per_sta_mbps:.1f} Mbps per STA")
