"""Pixel-wise uncertainty scoring and its online error-aligned supervision.

The scorer reads the coarsest (stride-32) visual tokens, aligns each
position to the text tokens with scaled dot-product attention, and emits
one logit per position: the model's own estimate of where it is likely to
be wrong. The training target is built online from the current
prediction's error map (detached, so the target never trains the
predictor that produced it), with sample-level difficulty and pixel-level
class-rebalancing weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .inits import init_standard_modules, normal_
from .maps import (
    LogitMap,
    ProbMap,
    TextTokens,
    TokenGrid,
    blur,
    logits_to_mask,
    require_binary,
    reshape_tokens,
    resize_logits,
)

SCORER_STRIDE = 32


@dataclass(frozen=True)
class UncLossConfig:
    """Knobs of the uncertainty loss.

    ``delta`` is the IoU threshold below which a sample counts as hard and
    gets the extra ``lambda_s`` weight; ``eps`` stabilizes the
    positive-pixel rebalancing ratio; the loss is disabled (exactly zero)
    for the first ``warmup_steps`` optimizer steps.
    """

    delta: float = 0.5
    lambda_s: float = 1.0
    eps: float = 1.0
    warmup_steps: int = 0
    target_blur: bool = False

    def __post_init__(self) -> None:
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.lambda_s < 0:
            raise ValueError("lambda_s must be >= 0")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")


class UncertaintyScorer(nn.Module):
    """Maps stride-32 visual tokens + text tokens to an uncertainty logit map."""

    def __init__(self, embed_width: int):
        super().__init__()
        self.embed_width = embed_width
        self.vis_proj = nn.Linear(embed_width, embed_width, bias=False)
        self.txt_proj = nn.Linear(embed_width, embed_width, bias=False)
        self.scale = nn.Parameter(torch.tensor(1.0 / math.sqrt(embed_width)))
        self.mlp = nn.Sequential(
            nn.Linear(2 * embed_width, embed_width),
            nn.ReLU(),
            nn.Linear(embed_width, 1),
        )

    def alignment(self, level: TokenGrid, text: TextTokens) -> tuple[torch.Tensor, torch.Tensor]:
        """Attention weights (B, N, L) over non-pad text and the aligned features."""
        projected_text = self.txt_proj(text.embeddings)
        scores = self.scale * (self.vis_proj(level.tokens) @ projected_text.transpose(1, 2))
        scores = scores.masked_fill(text.pad_mask[:, None, :], float("-inf"))
        weights = scores.softmax(dim=-1)
        return weights, weights @ projected_text

    def forward(self, level: TokenGrid, text: TextTokens) -> LogitMap:
        if level.stride != SCORER_STRIDE:
            raise ValueError(
                f"uncertainty scorer expects the stride-{SCORER_STRIDE} level, "
                f"got stride {level.stride}"
            )
        _, aligned = self.alignment(level, text)
        logits = self.mlp(torch.cat([level.tokens, aligned], dim=-1))  # (B, N, 1)
        h, w = level.hw
        return reshape_tokens(logits, h, w, stride=SCORER_STRIDE)

    def reset_parameters(self, gen: torch.Generator) -> None:
        init_standard_modules(self, gen, custom=["scale", "vis_proj.weight", "txt_proj.weight"])
        with torch.no_grad():
            for proj in (self.vis_proj, self.txt_proj):
                eye = torch.eye(self.embed_width)
                noise = torch.randn(eye.shape, generator=gen) * 1e-3
                proj.weight.copy_(eye + noise)
            self.scale.fill_(1.0 / math.sqrt(self.embed_width))


def error_map(pred: LogitMap, gt: ProbMap) -> ProbMap:
    """Binary map of pixels where the hard prediction disagrees with GT.

    The prediction thresholds at probability strictly above 0.5 and the
    result is detached: the supervision target must not backpropagate
    into whatever produced ``pred``.
    """
    if pred.values.shape != gt.values.shape:
        raise ValueError("prediction and ground truth must share a resolution")
    require_binary(gt.values, "ground truth")
    with torch.no_grad():
        hard = logits_to_mask(pred)
        errors = (hard != (gt.values > 0.5)).to(pred.values.dtype)
    return ProbMap(errors)


def build_error_target(pred: LogitMap, gt: ProbMap, cfg: UncLossConfig) -> ProbMap:
    """The (optionally smoothed) online supervision target for the scorer."""
    return blur(error_map(pred, gt), cfg.target_blur)


def sample_weights(
    pred_mask: torch.Tensor, gt: ProbMap, cfg: UncLossConfig
) -> torch.Tensor:
    """Per-sample weight 1 + lambda_s for items with IoU strictly below delta.

    IoU is computed on the hard masks; an empty-union sample counts as
    IoU 1 (not hard).
    """
    require_binary(gt.values, "ground truth")
    hard_gt = gt.values > 0.5
    pred_mask = pred_mask > 0.5 if pred_mask.dtype != torch.bool else pred_mask
    inter = (pred_mask & hard_gt).sum(dim=(1, 2, 3)).double()
    union = (pred_mask | hard_gt).sum(dim=(1, 2, 3)).double()
    iou = torch.where(union == 0, torch.ones_like(inter), inter / union.clamp(min=1))
    return 1.0 + cfg.lambda_s * (iou < cfg.delta).to(gt.values.dtype)


def pixel_weights(target: ProbMap, eps: float) -> torch.Tensor:
    """Class-rebalancing weight map: (n0 + eps) / (n1 + eps) on positives.

    Positives are entries strictly above 0.5. Call this on the *unblurred*
    error map so counts and positions stay exact.
    """
    positives = target.values > 0.5
    total = target.values.shape[1] * target.values.shape[2] * target.values.shape[3]
    n_pos = positives.sum(dim=(1, 2, 3), keepdim=True).to(target.values.dtype)
    n_neg = float(total) - n_pos
    pos_weight = (n_neg + eps) / (n_pos + eps)
    return torch.where(positives, pos_weight, torch.ones_like(target.values))


def uncertainty_loss(
    uncertainty: LogitMap,
    target: ProbMap,
    sample_w: torch.Tensor,
    pixel_w: torch.Tensor,
    step: int,
    cfg: UncLossConfig,
) -> torch.Tensor:
    """Weighted per-pixel BCE-with-logits between resized uncertainty and target.

    Returns exactly zero (with no gradient) while ``step`` is inside the
    warm-up window. The uncertainty map is bilinearly resized in logit
    space to the target's resolution before the comparison.
    """
    if step < cfg.warmup_steps:
        return uncertainty.values.new_zeros(())
    aligned = resize_logits(uncertainty, target.height, target.width)
    if pixel_w.shape != target.values.shape:
        raise ValueError("pixel weights must match the target resolution")
    if sample_w.shape != (target.batch,):
        raise ValueError("sample weights must be one scalar per batch item")
    per_pixel = F.binary_cross_entropy_with_logits(
        aligned.values, target.values.to(aligned.values.dtype), reduction="none"
    )
    weighted = sample_w.view(-1, 1, 1, 1).to(per_pixel.dtype) * pixel_w.to(per_pixel.dtype) * per_pixel
    return weighted.mean()
