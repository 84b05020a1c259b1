"""The full segmenter: backbone plus the three optional risk-guided stages.

Dataflow per forward pass:

    image ─ encode ─ pyramid ──────────────┐
    text  ─ encode ─ tokens ───────────────┤
    scorer(stride-32 tokens, text) → U ────┤ (when any flag needs it)
    gated fusion(pyramid, text, U) ────────┤ (use_gated_fusion)
    decode(pyramid, text) → coarse logits, mask features
    refinement(features, coarse, σ(U_full)) → refined logits (use_refinement)

Optional components are only constructed when their flag is set, and every
component draws its initial weights from its own seeded generator, so a
model with a flag off is bit-identical to a build that never contained
the module.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .backbone import BackboneConfig, TwoTowerBackbone
from .fusion import UncertaintyGatedFusion
from .maps import LogitMap, ProbMap, resize_logits, to_prob
from .refine import RefineConfig, RefinementHead, apply_refinement, soft_mask
from .scorer import UncertaintyScorer
from .seeding import component_generator


@dataclass(frozen=True, eq=False)
class PipelineOutput:
    """Everything downstream consumers (losses, metrics, export) need."""

    p_fg: LogitMap  # coarse full-resolution logits
    p_ref: LogitMap  # refined logits (== p_fg when refinement is off)
    uncertainty: LogitMap | None  # stride-32 logits from the scorer
    uncertainty_full: LogitMap | None  # resized to image resolution
    uncertainty_prob: ProbMap | None  # sigmoid of the full-resolution logits
    refine_mask: ProbMap | None
    residual: LogitMap | None
    mask_features: torch.Tensor


class UncertaintyGuidedSegmenter(nn.Module):
    def __init__(
        self,
        backbone_cfg: BackboneConfig,
        *,
        use_unc_loss: bool = True,
        use_gated_fusion: bool = True,
        use_refinement: bool = True,
        refine_cfg: RefineConfig | None = None,
        seed: int = 0,
    ):
        super().__init__()
        self.backbone_cfg = backbone_cfg
        self.use_unc_loss = use_unc_loss
        self.use_gated_fusion = use_gated_fusion
        self.use_refinement = use_refinement
        self.refine_cfg = refine_cfg or RefineConfig()

        self.backbone = TwoTowerBackbone(backbone_cfg)
        needs_scorer = use_unc_loss or use_gated_fusion or use_refinement
        self.scorer = UncertaintyScorer(backbone_cfg.embed_width) if needs_scorer else None
        self.fusion = (
            UncertaintyGatedFusion(backbone_cfg.embed_width, backbone_cfg.attention_heads)
            if use_gated_fusion
            else None
        )
        self.refiner = RefinementHead(backbone_cfg.embed_width) if use_refinement else None
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        """Seed each component independently of which others exist."""
        self.backbone.reset_parameters(component_generator(seed, "backbone"))
        if self.scorer is not None:
            self.scorer.reset_parameters(component_generator(seed, "scorer"))
        if self.fusion is not None:
            self.fusion.reset_parameters(component_generator(seed, "fusion"))
        if self.refiner is not None:
            self.refiner.reset_parameters(component_generator(seed, "refiner"))

    def forward(self, images: torch.Tensor, token_ids: torch.Tensor) -> PipelineOutput:
        pyramid = self.backbone.encode_image(images)
        text = self.backbone.encode_text(token_ids)

        uncertainty = None
        if self.scorer is not None:
            uncertainty = self.scorer(pyramid.level(32), text)
        if self.fusion is not None:
            pyramid = self.fusion(pyramid, text, uncertainty)

        decoded = self.backbone.decode(pyramid, text)
        p_fg = decoded.p_fg
        h, w = p_fg.height, p_fg.width

        uncertainty_full = None
        uncertainty_prob = None
        if uncertainty is not None:
            uncertainty_full = resize_logits(uncertainty, h, w)
            uncertainty_prob = to_prob(uncertainty_full)

        p_ref = p_fg
        mask = residual = None
        if self.refiner is not None:
            mask = soft_mask(
                uncertainty_prob,
                self.refine_cfg.tau,
                self.refine_cfg.temperature,
                self.refine_cfg.mask_blur,
            )
            residual = self.refiner(decoded.features_at(h, w), p_fg, uncertainty_prob)
            p_ref = apply_refinement(p_fg, mask, residual)

        return PipelineOutput(
            p_fg=p_fg,
            p_ref=p_ref,
            uncertainty=uncertainty,
            uncertainty_full=uncertainty_full,
            uncertainty_prob=uncertainty_prob,
            refine_mask=mask,
            residual=residual,
            mask_features=decoded.mask_features,
        )
