"""Segmentation loss and the total training objective.

The mask loss is binary cross-entropy on logits plus a soft Dice term,
equally weighted. Dice is computed per sample with a smoothing constant
of 1 and averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import TrainingDiverged
from .maps import LogitMap, ProbMap, require_binary

DICE_SMOOTH = 1.0


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the auxiliary terms in the total objective.

    ``lambda_ref = 0`` disables the refined-prediction supervision.
    """

    lambda_unc: float = 0.5
    lambda_ref: float = 1.0

    def __post_init__(self) -> None:
        if self.lambda_unc < 0 or self.lambda_ref < 0:
            raise ValueError("loss weights must be >= 0")


def seg_loss(pred: LogitMap, target: ProbMap) -> torch.Tensor:
    """BCE-with-logits plus per-sample soft Dice on a binary target."""
    if pred.values.shape != target.values.shape:
        raise ValueError(
            f"prediction {tuple(pred.values.shape)} and target "
            f"{tuple(target.values.shape)} disagree"
        )
    require_binary(target.values, "segmentation target")
    gt = target.values.to(pred.values.dtype)
    bce = F.binary_cross_entropy_with_logits(pred.values, gt)
    probs = torch.sigmoid(pred.values)
    inter = (probs * gt).sum(dim=(1, 2, 3))
    total = probs.sum(dim=(1, 2, 3)) + gt.sum(dim=(1, 2, 3))
    dice = 1.0 - (2.0 * inter + DICE_SMOOTH) / (total + DICE_SMOOTH)
    return bce + dice.mean()


def total_loss(
    seg: torch.Tensor,
    unc: torch.Tensor,
    ref: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted sum of the three components; aborts on non-finite input."""
    for name, value in (("seg", seg), ("unc", unc), ("ref", ref)):
        if not bool(torch.isfinite(torch.as_tensor(value)).all()):
            raise TrainingDiverged(f"{name} loss is non-finite: {value!r}")
    return seg + weights.lambda_unc * unc + weights.lambda_ref * ref
