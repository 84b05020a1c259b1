"""Segmentation evaluation: overall IoU, mean IoU, precision at thresholds.

All counts are exact integers, so accumulation is order-independent and
partial reports from parallel workers can be merged associatively.
Conventions: an empty union counts as a perfect match (IoU 1), and
``Pr@X`` uses a strict ``IoU > X`` comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .maps import LogitMap, require_binary

PRECISION_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


def binarize(pred: LogitMap) -> torch.Tensor:
    """Final hard prediction: sigmoid(logit) > 0.5, i.e. logit > 0."""
    return pred.values > 0


def _as_bool(mask: torch.Tensor, what: str) -> torch.Tensor:
    if mask.dtype != torch.bool:
        require_binary(mask, what)
        mask = mask > 0.5
    return mask


def mask_counts(pred: torch.Tensor, gt: torch.Tensor) -> tuple[int, int]:
    """Exact intersection and union pixel counts of two binary masks."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    pred = _as_bool(pred, "prediction")
    gt = _as_bool(gt, "ground truth")
    inter = int((pred & gt).sum())
    union = int((pred | gt).sum())
    return inter, union


def sample_iou(pred: torch.Tensor, gt: torch.Tensor) -> float:
    """Intersection over union of one sample; empty/empty counts as 1."""
    inter, union = mask_counts(pred, gt)
    return 1.0 if union == 0 else inter / union


@dataclass
class EvalReport:
    """Accumulated per-sample intersection/union counts for one split."""

    intersections: list[int] = field(default_factory=list)
    unions: list[int] = field(default_factory=list)

    def add(self, pred: torch.Tensor, gt: torch.Tensor) -> None:
        inter, union = mask_counts(pred, gt)
        self.add_counts(inter, union)

    def add_counts(self, inter: int, union: int) -> None:
        if not 0 <= inter <= union:
            raise ValueError(f"invalid counts: intersection {inter}, union {union}")
        self.intersections.append(inter)
        self.unions.append(union)

    def merge(self, other: "EvalReport") -> None:
        self.intersections.extend(other.intersections)
        self.unions.extend(other.unions)

    @property
    def num_samples(self) -> int:
        return len(self.unions)

    @property
    def ious(self) -> list[float]:
        return [
            1.0 if u == 0 else i / u
            for i, u in zip(self.intersections, self.unions)
        ]

    def oiou(self) -> float:
        if self.num_samples < 1:
            raise ValueError("empty report")
        total_union = sum(self.unions)
        return 1.0 if total_union == 0 else sum(self.intersections) / total_union

    def miou(self) -> float:
        if self.num_samples < 1:
            raise ValueError("empty report")
        ious = self.ious
        return sum(ious) / len(ious)

    def precision_at(self, threshold: float) -> float:
        if self.num_samples < 1:
            raise ValueError("empty report")
        hits = sum(1 for iou in self.ious if iou > threshold)
        return hits / self.num_samples

    def summary(self) -> dict[str, float]:
        out = {f"Pr@{t}": self.precision_at(t) for t in PRECISION_THRESHOLDS}
        out["oIoU"] = self.oiou()
        out["mIoU"] = self.miou()
        return out

    def to_table(self) -> str:
        lines = [f"samples {self.num_samples}"]
        for name, value in self.summary().items():
            lines.append(f"{name:<8} {value:.6f}")
        return "\n".join(lines) + "\n"

    def write_table(self, path: str | Path) -> None:
        Path(path).write_text(self.to_table(), encoding="utf-8")

    def write_keyvalues(self, path: str | Path) -> None:
        lines = [f"{name} {value:.6f}" for name, value in self.summary().items()]
        lines.append(f"samples {self.num_samples}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_keyvalues(path: str | Path) -> dict[str, float]:
    out: dict[str, float] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, value = line.rsplit(" ", 1)
        out[name] = float(value)
    return out


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the rank statistic, with tie averaging.

    Raises if only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must align")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    # average ranks over ties
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [scores.size]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = 0.5 * (s + e - 1) + 1.0
    rank_sum = ranks[labels].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
