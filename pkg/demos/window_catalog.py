"""Choosing a small set of window shapes that can still cover most objects.

Greedy selection over the candidate pool, followed by the upper bound on recall
that any scorer restricted to those shapes could reach.
"""
import numpy as np

from deepproposal.synth import SynthConfig, generate_synthetic
from deepproposal.window_catalog import candidate_pool, greedy_select, max_recall, window_count

ds = generate_synthetic(SynthConfig(seed=0, n_train=60, n_test=0))
gts = [ds.groundtruth[i] for i in ds.split("train")]
print(len(gts), "images,", sum(len(g) for g in gts), "objects")

pool = candidate_pool(20)
print("candidate pool:", len(pool), "shapes")

for k in (5, 10, 25, 50):
    cat = greedy_select(pool, gts, ds.cfg.scales, k)
    curve = [max_recall(cat, gts, ds.cfg.scales, b) for b in (0.5, 0.7, 0.9)]
    print(f"K={k:2d}  max recall @0.5/0.7/0.9 = " + " / ".join(f"{r:.3f}" for r in curve)
          + f"   windows on a 36x52 map: {window_count((36, 52), cat)}")

print("first shapes picked:", [(s.w, s.h) for s in cat.shapes[:8]])
areas = np.array([s.w * s.h for s in cat.shapes])
print("shape area (cells) min/median/max:", areas.min(), int(np.median(areas)), areas.max())
