"""Uncertainty-driven local refinement of the coarse mask logits.

The uncertainty probability map is turned into a soft spatial mask via a
temperature-scaled thresholded sigmoid (detached: the mask only selects,
it never trains the scorer), and a small conv head predicts a logit
residual from [mask features; coarse logits; uncertainty]. The residual
is added only where the soft mask allows, so low-risk regions keep their
original prediction. The head's final projection starts at zero, making
refinement an exact identity at initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .inits import init_standard_modules
from .losses import seg_loss
from .maps import LogitMap, ProbMap, blur


@dataclass(frozen=True)
class RefineConfig:
    """Soft-mask threshold/temperature and the auxiliary loss weight.

    ``lambda_ref = 0`` disables the auxiliary supervision on the refined
    prediction. Defaults were frozen after a sweep on the synthetic
    validation split (see README).
    """

    tau: float = 0.35
    temperature: float = 0.1
    lambda_ref: float = 1.0
    mask_blur: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.lambda_ref < 0:
            raise ValueError("lambda_ref must be >= 0")


def soft_mask(
    uncertainty: ProbMap, tau: float, temperature: float, smooth: bool = True
) -> ProbMap:
    """Soft refinement region: sigmoid((blur(u) - tau) / temperature), detached."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    base = blur(uncertainty, smooth).values
    return ProbMap(torch.sigmoid((base - tau) / temperature).detach())


class RefinementHead(nn.Module):
    """Two 3x3 convs with ReLU and a zero-initialized 1x1 residual projection."""

    def __init__(self, embed_width: int):
        super().__init__()
        self.conv1 = nn.Conv2d(embed_width + 2, embed_width, 3, padding=1)
        self.conv2 = nn.Conv2d(embed_width, embed_width, 3, padding=1)
        self.out = nn.Conv2d(embed_width, 1, 1)

    def forward(
        self, features: torch.Tensor, coarse: LogitMap, uncertainty: ProbMap
    ) -> LogitMap:
        shapes = {features.shape[-2:], coarse.values.shape[-2:], uncertainty.values.shape[-2:]}
        if len(shapes) != 1:
            raise ValueError(f"refinement inputs disagree on resolution: {shapes}")
        x = torch.cat([features, coarse.values, uncertainty.values], dim=1)
        x = torch.relu(self.conv1(x))
        x = torch.relu(self.conv2(x))
        return LogitMap(self.out(x))

    def reset_parameters(self, gen: torch.Generator) -> None:
        init_standard_modules(self, gen)
        with torch.no_grad():
            self.out.weight.zero_()
            self.out.bias.zero_()


def apply_refinement(coarse: LogitMap, mask: ProbMap, residual: LogitMap) -> LogitMap:
    """Fold the residual into the coarse logits where the soft mask allows."""
    if not coarse.values.shape == mask.values.shape == residual.values.shape:
        raise ValueError("coarse logits, mask, and residual must share a shape")
    return LogitMap(coarse.values + mask.values * residual.values)


def refinement_loss(refined: LogitMap, gt: ProbMap) -> torch.Tensor:
    """Auxiliary supervision on the refined prediction (same form as seg_loss)."""
    return seg_loss(refined, gt)
