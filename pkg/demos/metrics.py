"""Proposal metrics on a toy set of rankings.

Three rankings of increasing quality for the same objects; prints recall
curves, AUC, average recall and the proposal counts needed for target recalls.
"""
import numpy as np

from deepproposal.evaluation import evaluate
from deepproposal.geometry import GroundTruth

rng = np.random.default_rng(1)
gts, rankings = [], {"random": [], "jittered": [], "tight": []}
for i in range(30):
    wh = rng.uniform(30, 120, (2, 2))
    xy = rng.uniform(0, 1, (2, 2)) * (np.array([320, 240]) - wh)
    boxes = np.hstack([xy, xy + wh])
    gts.append(GroundTruth(f"im{i}", (240, 320), boxes))
    n = 500
    rxy = rng.uniform(0, 250, (n, 2))
    noise = np.hstack([rxy, rxy + rng.uniform(20, 120, (n, 2))])
    for name, jitter, rank in (("random", None, 0), ("jittered", 12.0, 40), ("tight", 3.0, 2)):
        props = noise.copy()
        if jitter is not None:
            good = np.repeat(boxes, 5, axis=0) + rng.normal(0, jitter, (10, 4))
            props = np.insert(props, rank, good, axis=0)
        rankings[name].append(props)  # row order is the ranking

for name, props in rankings.items():
    rep = evaluate(props, gts)
    r = rep.recall_vs_n[0.5]
    print(f"{name:9s} AUC {rep.auc:.3f}  AR@100 {rep.ar_at.get(100, float('nan')):.3f}  "
          f"recall@10/100 (0.5) {r[r[:, 0] == 10, 1][0]:.2f}/{r[r[:, 0] == 100, 1][0]:.2f}  "
          f"N@25/50/75% {rep.n_at}")
