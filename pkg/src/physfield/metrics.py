"""Evaluation metrics for scalar property predictions.

Per instance, for ground truth m and prediction m_hat (both positive):
    ade  = |m - m_hat|
    alde = |ln m - ln m_hat|
    ape  = |m - m_hat| / m
    mnre = min(m / m_hat, m_hat / m)     (equals exp(-alde))

Pairwise relationship accuracy (PRA) scores the predicted greater/less
ordering over all unordered pairs: ground-truth ties are excluded,
prediction ties count as wrong.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence


@dataclass(frozen=True)
class MetricsReport:
    scenes: tuple[str, ...]
    preds: tuple[float, ...]
    gts: tuple[float, ...]
    ade: tuple[float, ...]
    alde: tuple[float, ...]
    ape: tuple[float, ...]
    mnre: tuple[float, ...]
    mean_ade: float
    mean_alde: float
    mean_ape: float
    mean_mnre: float
    pra: Optional[float]

    @property
    def n(self) -> int:
        return len(self.scenes)


def compute_metrics(pred: float, gt: float) -> tuple[float, float, float, float]:
    """(ade, alde, ape, mnre) for one positive prediction/ground-truth pair."""
    if not (pred > 0 and gt > 0):
        raise ValueError(f"metrics need positive values, got pred={pred}, gt={gt}")
    ade = abs(gt - pred)
    alde = abs(math.log(gt) - math.log(pred))
    ape = abs(gt - pred) / gt
    mnre = min(gt / pred, pred / gt)
    return ade, alde, ape, mnre


def pairwise_relationship_accuracy(preds: Sequence[float], gts: Sequence[float]) -> float:
    """Fraction of unordered pairs whose predicted ordering matches the
    ground-truth ordering."""
    if len(preds) != len(gts):
        raise ValueError(f"length mismatch: {len(preds)} preds vs {len(gts)} gts")
    n = len(gts)
    if n < 2:
        raise ValueError(f"PRA needs at least 2 instances, got {n}")
    correct = 0
    total = 0
    for i in range(n):
        for j in range(i + 1, n):
            if gts[i] == gts[j]:
                continue
            total += 1
            gt_sign = 1 if gts[i] > gts[j] else -1
            pred_sign = 0 if preds[i] == preds[j] else (1 if preds[i] > preds[j] else -1)
            if pred_sign == gt_sign:
                correct += 1
    if total == 0:
        raise ValueError("PRA undefined: every ground-truth pair is tied")
    return correct / total


def aggregate_report(rows: Sequence[tuple[str, float, float]]) -> MetricsReport:
    """Per-instance metrics plus arithmetic means over (scene, pred, gt) rows.

    PRA is included when at least two rows with distinct ground truths exist,
    otherwise left absent.
    """
    if not rows:
        raise ValueError("no rows to aggregate")
    scenes, preds, gts = zip(*rows)
    per = [compute_metrics(p, g) for p, g in zip(preds, gts)]
    ade, alde, ape, mnre = (tuple(col) for col in zip(*per))
    pra = None
    if len(rows) >= 2:
        try:
            pra = pairwise_relationship_accuracy(preds, gts)
        except ValueError:
            pra = None
    n = len(rows)
    return MetricsReport(
        scenes=tuple(scenes), preds=tuple(float(p) for p in preds),
        gts=tuple(float(g) for g in gts),
        ade=ade, alde=alde, ape=ape, mnre=mnre,
        mean_ade=sum(ade) / n, mean_alde=sum(alde) / n,
        mean_ape=sum(ape) / n, mean_mnre=sum(mnre) / n,
        pra=pra,
    )
