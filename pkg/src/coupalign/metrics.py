"""Referring-segmentation evaluation: overall IoU, mean IoU, precision at
IoU thresholds, and the failure-case histogram over low-IoU buckets.
Counts are exact integers; ratios are formed once at finalize."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from coupalign.tensor import ContractError, InputError

THRESHOLDS = (0.5, 0.7, 0.9)
HIST_EDGES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass
class EvalAccumulator:
    total_intersection: int = 0
    total_union: int = 0
    per_sample_iou: list = field(default_factory=list)

    def accumulate(self, pred: np.ndarray, gt: np.ndarray) -> "EvalAccumulator":
        """Add one sample. Empty-pred with empty-gt counts as IoU 1
        (vacuous match); empty-gt with non-empty pred counts as 0."""
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise InputError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
        p = pred.astype(bool)
        g = gt.astype(bool)
        inter = int(np.count_nonzero(p & g))
        union = int(np.count_nonzero(p | g))
        self.total_intersection += inter
        self.total_union += union
        self.per_sample_iou.append(1.0 if union == 0 else inter / union)
        return self

    def merge(self, other: "EvalAccumulator") -> "EvalAccumulator":
        self.total_intersection += other.total_intersection
        self.total_union += other.total_union
        self.per_sample_iou.extend(other.per_sample_iou)
        return self

    def finalize(self) -> dict:
        """{oIoU, mIoU, prec@0.5, prec@0.7, prec@0.9, n}; prec uses a
        strict 'higher than threshold' comparison."""
        n = len(self.per_sample_iou)
        if n == 0:
            raise ContractError("finalize() on an empty accumulator")
        ious = np.asarray(self.per_sample_iou)
        out = {
            "oIoU": 1.0 if self.total_union == 0 else self.total_intersection / self.total_union,
            "mIoU": float(ious.mean()),
            "n": n,
        }
        for eps in THRESHOLDS:
            out[f"prec@{eps}"] = float(np.count_nonzero(ious > eps) / n)
        return out

    def iou_histogram(self, edges=HIST_EDGES) -> list:
        """Failure cases (IoU < the last edge) bucketed into half-open
        ranges [edges[k], edges[k+1])."""
        counts = [0] * (len(edges) - 1)
        for iou in self.per_sample_iou:
            if iou >= edges[-1]:
                continue
            for k in range(len(edges) - 1):
                if edges[k] <= iou < edges[k + 1]:
                    counts[k] += 1
                    break
        return counts
