"""Per-sample uncertainty visualization export.

For every requested sample id this writes five lossless PNGs — the input
render, ground-truth and prediction overlays, the uncertainty heat map
(blue cold to red warm, normalized to the sample's min/max), and the
binary error map — plus a plain-text sidecar holding the raw uncertainty
probabilities (row-major, six decimals).
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError
from .metrics import binarize
from .pipeline import UncertaintyGuidedSegmenter
from .synthdata import SynthDataset

logger = logging.getLogger(__name__)


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def _save_rgb(path: Path, chw: np.ndarray) -> None:
    Image.fromarray(_to_uint8(chw).transpose(1, 2, 0), mode="RGB").save(path)


def _overlay(image: np.ndarray, mask: np.ndarray, color: tuple[float, float, float]) -> np.ndarray:
    out = image.copy()
    for c in range(3):
        out[c] = np.where(mask, 0.45 * image[c] + 0.55 * color[c], image[c])
    return out


def _heat(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    norm = np.zeros_like(values) if hi - lo < 1e-12 else (values - lo) / (hi - lo)
    return np.stack([norm, 0.15 * np.ones_like(norm), 1.0 - norm])


def export_uncertainty(
    model: UncertaintyGuidedSegmenter,
    dataset: SynthDataset,
    sample_ids: list[int],
    out_dir: str | Path,
) -> list[Path]:
    """Render the requested samples; unknown ids are skipped with a warning."""
    if model.scorer is None:
        raise ConfigError(
            "this model was trained without the uncertainty scorer; nothing to export"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    model.eval()
    for sid in sample_ids:
        if not 0 <= sid < len(dataset):
            logger.warning("sample id %d outside dataset of %d samples; skipped", sid, len(dataset))
            continue
        with torch.no_grad():
            out = model(dataset.images[sid : sid + 1], dataset.token_ids[sid : sid + 1])
        image = dataset.images[sid].numpy()
        gt = dataset.masks[sid, 0].numpy() > 0.5
        pred = binarize(out.p_ref)[0, 0].numpy()
        unc = out.uncertainty_prob.values[0, 0].numpy().astype(np.float64)
        errors = pred != gt

        stem = out_dir / f"sample{sid:04d}"
        files = {
            f"{stem}_input.png": image,
            f"{stem}_gt.png": _overlay(image, gt, (1.0, 0.1, 0.1)),
            f"{stem}_pred.png": _overlay(image, pred, (0.1, 1.0, 0.1)),
            f"{stem}_uncertainty.png": _heat(unc),
            f"{stem}_error.png": np.repeat(errors[None].astype(np.float64), 3, axis=0),
        }
        for name, chw in files.items():
            path = Path(name)
            _save_rgb(path, chw)
            written.append(path)

        sidecar = Path(f"{stem}_uncertainty.txt")
        with sidecar.open("w", encoding="utf-8") as fh:
            for row in unc:
                fh.write(" ".join(f"{v:.6f}" for v in row) + "\n")
        written.append(sidecar)
    return written


def read_sidecar(path: str | Path) -> np.ndarray:
    rows = [
        [float(v) for v in line.split()]
        for line in Path(path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    return np.array(rows, dtype=np.float64)
