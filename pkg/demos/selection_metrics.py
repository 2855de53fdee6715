"""
Scoring a mask against the keys that matter
===========================================

For each query, the ground-truth key set is the smallest set of keys holding
a fraction ``tau*`` of its attention mass. A block mask predicts every key in
its selected tiles; precision and recall compare the two per query.
"""

import numpy as np

from sparsegrid import DiscoveryConfig, discover, ground_truth_sets, score_selection
from sparsegrid.attention import BlockSelection
from sparsegrid.workloads import WorkloadSpec, generate

t = generate(WorkloadSpec(512, 32, pattern="local", pattern_params={"window": 24}, seed=3))[0][0]
truth = ground_truth_sets(t, tau_star=0.95)
sizes = [len(k) for k in truth.key_sets]
print("ground-truth set size: median", int(np.median(sizes)), "max", max(sizes))

# Dense selection: perfect recall, poor precision.
rep = score_selection(BlockSelection.all_causal(512, 16), truth)
print(f"all causal      P={rep.precision:.3f} R={rep.recall:.3f} F1={rep.f1:.3f}")

# Discovered masks trade recall for sparsity as tau drops.
for tau in (0.95, 0.9, 0.7):
    sel, _, cost = discover(t, DiscoveryConfig(4, 16, tau, "head-rr"))
    rep = score_selection(sel, truth)
    print(f"head-rr tau={tau:<4} P={rep.precision:.3f} R={rep.recall:.3f} F1={rep.f1:.3f} "
          f"sparsity={cost.sparsity:.3f}")
