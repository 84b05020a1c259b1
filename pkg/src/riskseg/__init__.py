"""Uncertainty-guided referring segmentation on synthetic scenes.

A two-tower segmenter augmented with three optional risk-driven stages:
a pixel-wise uncertainty scorer trained online against the model's own
error map, uncertainty-gated cross-modal fusion, and uncertainty-driven
local mask refinement. Ships with a deterministic synthetic dataset,
metrics, and a train/eval/ablate CLI.
"""

from .backbone import BackboneConfig, DecoderOutput, TwoTowerBackbone
from .config import RunConfig
from .fusion import UncertaintyGatedFusion, gate
from .losses import LossWeights, seg_loss, total_loss
from .maps import (
    FeaturePyramid,
    LogitMap,
    ProbMap,
    TextTokens,
    TokenGrid,
    blur,
    flatten_map,
    logits_to_mask,
    reshape_tokens,
    resize_logits,
    to_prob,
)
from .metrics import EvalReport, auroc, binarize, sample_iou
from .pipeline import PipelineOutput, UncertaintyGuidedSegmenter
from .refine import (
    RefineConfig,
    RefinementHead,
    apply_refinement,
    refinement_loss,
    soft_mask,
)
from .scorer import (
    UncertaintyScorer,
    UncLossConfig,
    build_error_target,
    error_map,
    pixel_weights,
    sample_weights,
    uncertainty_loss,
)
from .synthdata import (
    Manifest,
    SampleRecord,
    SceneConfig,
    SynthDataset,
    build_dataset,
    generate_scene,
    make_split,
    make_splits,
    resolve_expression,
)
from .train import build_model, compute_losses, evaluate_model, train

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "DecoderOutput",
    "EvalReport",
    "FeaturePyramid",
    "LogitMap",
    "LossWeights",
    "Manifest",
    "PipelineOutput",
    "ProbMap",
    "RefineConfig",
    "RefinementHead",
    "RunConfig",
    "SampleRecord",
    "SceneConfig",
    "SynthDataset",
    "TextTokens",
    "TokenGrid",
    "TwoTowerBackbone",
    "UncLossConfig",
    "UncertaintyGatedFusion",
    "UncertaintyGuidedSegmenter",
    "UncertaintyScorer",
    "apply_refinement",
    "auroc",
    "binarize",
    "blur",
    "build_dataset",
    "build_error_target",
    "build_model",
    "compute_losses",
    "error_map",
    "evaluate_model",
    "flatten_map",
    "gate",
    "generate_scene",
    "logits_to_mask",
    "make_split",
    "make_splits",
    "pixel_weights",
    "refinement_loss",
    "resize_logits",
    "reshape_tokens",
    "resolve_expression",
    "sample_iou",
    "sample_weights",
    "seg_loss",
    "soft_mask",
    "to_prob",
    "total_loss",
    "train",
    "uncertainty_loss",
]
