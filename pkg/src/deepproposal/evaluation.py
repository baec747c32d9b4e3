"""
Proposal-quality metrics: recall against proposal count and against IoU,
area under the recall/IoU curve, average recall and N@X% summaries.

All metrics use each image's own top-N proposals and match every object
independently to its best-overlapping proposal.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .geometry import ScoredBox, as_box_array, iou_matrix

DEFAULT_N_GRID = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000)
DEFAULT_IOU_GRID = tuple(np.round(np.linspace(0.5, 1.0, 21), 4))


class UnrankedProposalsError(ValueError):
    pass


def _as_ranked(proposals) -> np.ndarray:
    """Boxes of one image's proposals, checking they come best first."""
    if isinstance(proposals, np.ndarray):
        return as_box_array(proposals)
    proposals = list(proposals)
    if proposals and not all(isinstance(p, ScoredBox) for p in proposals):
        raise UnrankedProposalsError("proposals must carry scores (ScoredBox) to be ranked")
    scores = np.array([p.score for p in proposals])
    if len(scores) > 1 and (np.diff(scores) > 0).any():
        raise UnrankedProposalsError("proposals must be sorted by descending score")
    return as_box_array(proposals)


class OverlapTable:
    """Running best IoU per object as proposals are added in rank order.

    ``best(n)`` gives, for every object of every image, the best IoU among
    that image's first ``n`` proposals.
    """

    def __init__(self, proposals: Sequence, groundtruth: Sequence):
        if len(proposals) != len(groundtruth):
            raise ValueError("need one proposal list per ground-truth image")
        self.running = []
        self.n_gt = 0
        self.empty_images = 0
        self.max_props = 0
        for props, gt in zip(proposals, groundtruth):
            boxes = _as_ranked(props)
            g = as_box_array(gt.boxes if hasattr(gt, "boxes") else gt)
            self.n_gt += len(g)
            self.empty_images += len(g) == 0
            self.max_props = max(self.max_props, len(boxes))
            if len(g) == 0:
                continue
            if len(boxes) == 0:
                self.running.append(np.zeros((0, len(g))))
            else:
                self.running.append(np.maximum.accumulate(iou_matrix(boxes, g), axis=0))

    def best(self, n: int) -> np.ndarray:
        out = []
        for r in self.running:
            if n <= 0 or len(r) == 0:
                out.append(np.zeros(r.shape[1]))
            else:
                out.append(r[min(n, len(r)) - 1])
        return np.concatenate(out) if out else np.zeros(0)

    def recall(self, n: int, beta: float) -> float:
        if self.n_gt == 0:
            return 1.0
        return float((self.best(n) >= beta).mean())


def recall_vs_n(proposals, groundtruth, beta: float = 0.5, n_grid=DEFAULT_N_GRID,
                table: OverlapTable | None = None) -> np.ndarray:
    """``(len(n_grid), 2)`` curve of (N, recall at IoU >= beta)."""
    table = table or OverlapTable(proposals, groundtruth)
    return np.array([[n, table.recall(n, beta)] for n in n_grid], dtype=np.float64)


def recall_vs_iou(proposals, groundtruth, n: int = 1000, iou_grid=DEFAULT_IOU_GRID,
                  table: OverlapTable | None = None) -> np.ndarray:
    """``(len(iou_grid), 2)`` curve of (IoU threshold, recall with top-n)."""
    table = table or OverlapTable(proposals, groundtruth)
    best = table.best(n)
    if table.n_gt == 0:
        return np.array([[t, 1.0] for t in iou_grid])
    return np.array([[t, float((best >= t).mean())] for t in iou_grid], dtype=np.float64)


def auc(curve) -> float:
    """Trapezoidal area under a recall/IoU curve, divided by the IoU span."""
    curve = np.asarray(curve, dtype=np.float64)
    if len(curve) < 2:
        raise ValueError("AUC needs at least two grid points")
    x, y = curve[:, 0], curve[:, 1]
    if (np.diff(x) <= 0).any():
        raise ValueError("IoU grid must be strictly ascending")
    dx = np.diff(x)
    return float(np.sum((y[:-1] + y[1:]) / 2 * dx) / np.sum(dx))


def average_recall_at(table: OverlapTable, n: int) -> float:
    """Mean over objects of ``max(0, 2 * (best IoU - 0.5))``."""
    if table.n_gt == 0:
        return 1.0
    return float(np.clip(2.0 * (table.best(n) - 0.5), 0.0, None).mean())


def average_recall(proposals, groundtruth, n_grid=DEFAULT_N_GRID,
                   table: OverlapTable | None = None) -> np.ndarray:
    """``(len(n_grid), 2)`` curve of (N, average recall over IoU in [0.5, 1])."""
    table = table or OverlapTable(proposals, groundtruth)
    return np.array([[n, average_recall_at(table, n)] for n in n_grid], dtype=np.float64)


def n_at_recall(proposals, groundtruth, beta: float, target: float,
                table: OverlapTable | None = None) -> int | None:
    """Smallest per-image budget reaching ``target`` recall, ``None`` if unreachable."""
    if not 0.0 < target <= 1.0:
        raise ValueError(f"target must be in (0, 1], got {target}")
    table = table or OverlapTable(proposals, groundtruth)
    hi = table.max_props
    if table.recall(hi, beta) < target:
        return None
    lo = 0  # recall(lo) < target unless target is met with nothing
    if table.recall(0, beta) >= target:
        return 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if table.recall(mid, beta) >= target:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class EvalReport:
    recall_vs_n: dict[float, np.ndarray]
    recall_vs_iou: dict[int, np.ndarray]
    auc: float
    average_recall_vs_n: np.ndarray
    n_at: dict[str, int | None]
    ar_at: dict[int, float]
    n_images: int = 0
    n_objects: int = 0
    images_without_objects: int = 0
    config: dict = field(default_factory=dict)

    def check_invariants(self):
        for curve in self.recall_vs_n.values():
            assert ((curve[:, 1] >= 0) & (curve[:, 1] <= 1)).all()
            assert (np.diff(curve[:, 1]) >= 0).all(), "recall must not drop with more proposals"
        for curve in self.recall_vs_iou.values():
            assert ((curve[:, 1] >= 0) & (curve[:, 1] <= 1)).all()
            assert (np.diff(curve[:, 1]) <= 0).all(), "recall must not grow with stricter IoU"

    def summary(self) -> dict:
        return {"auc": self.auc, "n_at": self.n_at,
                "ar_at": {str(k): v for k, v in self.ar_at.items()},
                "recall": {str(b): float(c[-1, 1]) for b, c in self.recall_vs_n.items()},
                "n_images": self.n_images, "n_objects": self.n_objects,
                "images_without_objects": self.images_without_objects,
                "config": self.config}

    def write(self, out_dir: str | Path):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        curves = {f"recall_vs_n_iou{b:g}": c for b, c in self.recall_vs_n.items()}
        curves.update({f"recall_vs_iou_n{n}": c for n, c in self.recall_vs_iou.items()})
        curves["average_recall_vs_n"] = self.average_recall_vs_n
        for name, curve in curves.items():
            with open(out / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["x", "y"])
                for x, y in curve:
                    w.writerow([repr(float(x)), repr(float(y))])
        with open(out / "summary.json", "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate(proposals, groundtruth, betas=(0.5, 0.7), n_grid=DEFAULT_N_GRID,
             iou_grid=DEFAULT_IOU_GRID, iou_budgets=(100, 1000), auc_budget: int = 1000,
             n_at_beta: float = 0.7, max_boxes: int = 2000) -> EvalReport:
    """Compute the full metric suite; proposals are capped at ``max_boxes`` per image."""
    capped = [p[:max_boxes] for p in proposals]
    table = OverlapTable(capped, groundtruth)
    n_grid = tuple(n for n in n_grid if n <= max_boxes)
    rvn = {b: recall_vs_n(None, None, b, n_grid, table) for b in betas}
    rvi = {n: recall_vs_iou(None, None, n, iou_grid, table) for n in iou_budgets}
    auc_curve = rvi.get(auc_budget)
    if auc_curve is None:
        auc_curve = recall_vs_iou(None, None, auc_budget, iou_grid, table)
    n_at = {f"{int(t * 100)}%": n_at_recall(None, None, n_at_beta, t, table)
            for t in (0.25, 0.5, 0.75)}
    report = EvalReport(
        recall_vs_n=rvn, recall_vs_iou=rvi, auc=auc(auc_curve),
        average_recall_vs_n=average_recall(None, None, n_grid, table), n_at=n_at,
        ar_at={n: average_recall_at(table, n) for n in (100, 1000)},
        n_images=len(groundtruth), n_objects=table.n_gt,
        images_without_objects=table.empty_images,
        config={"betas": list(betas), "n_grid": list(n_grid),
                "iou_grid": [float(t) for t in iou_grid], "auc_budget": auc_budget,
                "n_at_beta": n_at_beta, "max_boxes": max_boxes})
    report.check_invariants()
    return report
