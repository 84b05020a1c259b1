"""Training loop, loss assembly, and split evaluation.

Determinism contract: everything random is keyed by the run seed — the
model components at init, the torch RNG at every epoch start (dropout),
and the per-epoch shuffle order. Re-running a config reproduces the
final metrics bit-for-bit, and resuming from an epoch-boundary
checkpoint continues the same trajectory.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint, restore_model, restore_optimizer, save_checkpoint
from .config import RunConfig
from .errors import DataError, TrainingDiverged
from .losses import LossWeights, seg_loss, total_loss
from .maps import ProbMap, logits_to_mask
from .metrics import EvalReport, binarize
from .pipeline import PipelineOutput, UncertaintyGuidedSegmenter
from .refine import refinement_loss
from .scorer import (
    UncLossConfig,
    build_error_target,
    error_map,
    pixel_weights,
    sample_weights,
    uncertainty_loss,
)
from .seeding import stable_seed
from .synthdata import Manifest, SynthDataset, build_dataset

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.rsck"
SPLITS = ("train", "val", "test")


def build_model(cfg: RunConfig) -> UncertaintyGuidedSegmenter:
    return UncertaintyGuidedSegmenter(
        cfg.backbone_config(),
        use_unc_loss=cfg.use_unc_loss,
        use_gated_fusion=cfg.use_gated_fusion,
        use_refinement=cfg.use_refinement,
        refine_cfg=cfg.refine_config(),
        seed=cfg.seed,
    )


def manifest_path(data_dir: str | Path, split: str) -> Path:
    return Path(data_dir) / f"{split}.manifest"


def load_split(data_dir: str | Path, split: str, cfg: RunConfig) -> SynthDataset:
    path = manifest_path(data_dir, split)
    if not path.exists():
        raise DataError(f"missing manifest for split {split!r}: {path}")
    return build_dataset(Manifest.load(path), cfg.scene_config())


def compute_losses(
    out: PipelineOutput,
    target: ProbMap,
    step: int,
    unc_cfg: UncLossConfig,
    weights: LossWeights,
    *,
    use_unc_loss: bool,
    use_refinement: bool,
) -> dict[str, torch.Tensor]:
    seg = seg_loss(out.p_fg, target)
    zero = out.p_fg.values.new_zeros(())

    unc = zero
    if use_unc_loss and out.uncertainty is not None:
        errors = error_map(out.p_fg, target)
        unc = uncertainty_loss(
            out.uncertainty,
            build_error_target(out.p_fg, target, unc_cfg),
            sample_weights(logits_to_mask(out.p_fg), target, unc_cfg),
            pixel_weights(errors, unc_cfg.eps),
            step,
            unc_cfg,
        )

    ref = refinement_loss(out.p_ref, target) if use_refinement else zero
    total = total_loss(seg, unc, ref, weights)
    return {"seg": seg, "unc": unc, "ref": ref, "total": total}


def polynomial_lr(base_lr: float, step: int, total_steps: int, power: float) -> float:
    remaining = max(0.0, 1.0 - step / max(total_steps, 1))
    return base_lr * remaining**power


@dataclass
class TrainResult:
    checkpoint_path: Path
    history: list[dict]
    final_val_miou: float
    best_val_miou: float
    seconds: float


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def evaluate_model(
    model: UncertaintyGuidedSegmenter, dataset: SynthDataset, batch_size: int = 32
) -> EvalReport:
    """Hard-threshold the refined prediction and accumulate IoU counts."""
    report = EvalReport()
    model.eval()
    with torch.no_grad():
        for idx in _batches(len(dataset), batch_size, np.arange(len(dataset))):
            out = model(dataset.images[idx], dataset.token_ids[idx])
            preds = binarize(out.p_ref)
            gts = dataset.masks[idx] > 0.5
            for b in range(preds.shape[0]):
                report.add(preds[b], gts[b])
    return report


def iter_eval_outputs(
    model: UncertaintyGuidedSegmenter, dataset: SynthDataset, batch_size: int = 32
):
    """Yield (indices, PipelineOutput) over a split in eval mode."""
    model.eval()
    with torch.no_grad():
        for idx in _batches(len(dataset), batch_size, np.arange(len(dataset))):
            yield idx, model(dataset.images[idx], dataset.token_ids[idx])


def train(
    cfg: RunConfig,
    data_dir: str | Path,
    out_dir: str | Path,
    *,
    resume: str | Path | None = None,
) -> TrainResult:
    """Train per config, checkpointing and logging val mIoU every epoch.

    A non-finite loss aborts the run with :class:`TrainingDiverged`; the
    checkpoint of the last completed epoch stays on disk.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / CHECKPOINT_NAME
    log_path = out_dir / "metrics.log"

    train_set = load_split(data_dir, "train", cfg)
    val_set = load_split(data_dir, "val", cfg)

    model = build_model(cfg)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
    )

    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    unc_cfg = cfg.unc_loss_config()
    weights = cfg.loss_weights()

    start_epoch = 0
    global_step = 0
    history: list[dict] = []
    if resume is not None:
        ckpt = load_checkpoint(resume)
        restore_model(model, ckpt)
        restore_optimizer(optimizer, model, ckpt)
        start_epoch = ckpt.epoch
        global_step = ckpt.global_step
        history = ckpt.history
        logger.info("resumed from %s at epoch %d (step %d)", resume, start_epoch, global_step)

    started = time.perf_counter()
    best_val = 0.0
    final_val = 0.0
    for epoch in range(start_epoch, cfg.epochs):
        torch.manual_seed(stable_seed(cfg.seed, "epoch", epoch))
        order = np.random.default_rng(
            stable_seed(cfg.seed, "shuffle", epoch)
        ).permutation(len(train_set))

        model.train()
        epoch_loss = 0.0
        lr = cfg.lr
        for idx in _batches(len(train_set), cfg.batch_size, order):
            lr = polynomial_lr(cfg.lr, global_step, total_steps, cfg.poly_power)
            for group in optimizer.param_groups:
                group["lr"] = lr

            out = model(train_set.images[idx], train_set.token_ids[idx])
            losses = compute_losses(
                out,
                ProbMap(train_set.masks[idx]),
                global_step,
                unc_cfg,
                weights,
                use_unc_loss=cfg.use_unc_loss,
                use_refinement=cfg.use_refinement,
            )
            if not bool(torch.isfinite(losses["total"])):
                raise TrainingDiverged(
                    f"non-finite total loss at step {global_step}; "
                    f"last good checkpoint: {ckpt_path}"
                )
            optimizer.zero_grad()
            losses["total"].backward()
            optimizer.step()
            epoch_loss += float(losses["total"].detach())
            global_step += 1

        val_report = evaluate_model(model, val_set)
        val_miou = val_report.miou()
        final_val = val_miou
        best_val = max(best_val, val_miou)
        entry = {
            "epoch": epoch + 1,
            "step": global_step,
            "train_loss": epoch_loss / steps_per_epoch,
            "val_miou": val_miou,
            "lr": lr,
        }
        history.append(entry)
        line = (
            f"epoch={entry['epoch']} step={entry['step']} "
            f"train_loss={entry['train_loss']:.6f} val_miou={entry['val_miou']:.6f} "
            f"lr={entry['lr']:.6g}"
        )
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        logger.info(line)

        save_checkpoint(
            ckpt_path,
            model,
            cfg,
            optimizer=optimizer,
            epoch=epoch + 1,
            global_step=global_step,
            history=history,
        )

    return TrainResult(
        checkpoint_path=ckpt_path,
        history=history,
        final_val_miou=final_val,
        best_val_miou=best_val,
        seconds=time.perf_counter() - started,
    )


def load_model_from_checkpoint(
    path: str | Path, *, force: bool = False
) -> tuple[UncertaintyGuidedSegmenter, RunConfig]:
    ckpt = load_checkpoint(path)
    model = build_model(ckpt.config)
    restore_model(model, ckpt, force=force)
    return model, ckpt.config
