"""Compare adaptation variants on the default synthetic shift.

For each seed: pre-train on the source subjects, then adapt with MutualSHOT
and its ablations and score everything on held-out target subjects. Roughly a
minute per seed on one core.

    python3 demos/transfer_experiment.py [n_seeds]
"""

import sys
import time

import numpy as np

from mutualshot.pipeline import transfer_trial

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
modes = ("MutualSHOT", "SSL-SHOT", "SSL-SHOT-IM", "SHOT", "SHOT-IM")

t0 = time.perf_counter()
runs = []
for seed in range(n_seeds):
    runs.append(transfer_trial(seed, modes=modes))
    print(f"seed {seed} done ({time.perf_counter() - t0:.0f}s)")

print(f"\n{'':14s}{'SDT':>8s}{'ViT':>8s}")
for key in ("source_val", "source_only") + modes:
    sdt = np.mean([r[key]["sdt"] for r in runs])
    vit = np.mean([r[key]["vit"] for r in runs])
    print(f"{key:14s}{sdt:8.3f}{vit:8.3f}")
