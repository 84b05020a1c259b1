"""Checkpoint archive: named arrays plus a JSON manifest.

Byte layout
-----------
A checkpoint is an uncompressed ZIP archive containing:

``manifest.json``
    ``format_version`` (int), ``config`` (flat RunConfig dict),
    ``config_hash`` (RunConfig.arch_hash at save time), ``epoch`` (last
    completed epoch, 1-based), ``global_step``, ``optimizer_steps``
    (per-parameter Adam step counters), and ``arrays`` — a list of
    ``{name, shape, dtype}`` records, one per stored array.

``arrays/<parameter name>.npy``
    Model parameters as standard little-endian ``.npy`` files.

``optim/<parameter name>.exp_avg.npy`` / ``....exp_avg_sq.npy``
    AdamW first/second-moment buffers (present when the checkpoint was
    saved with an optimizer).

Loading refuses to restore into a model whose architecture hash differs
from ``config_hash`` unless explicitly forced.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .errors import CheckpointError

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: RunConfig
    config_hash: str
    epoch: int
    global_step: int
    arrays: dict[str, np.ndarray]
    optimizer_steps: dict[str, int]
    history: list[dict]


def _npy_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, array)
    return buf.getvalue()


def save_checkpoint(
    path: str | Path,
    model: torch.nn.Module,
    config: RunConfig,
    *,
    optimizer: torch.optim.AdamW | None = None,
    epoch: int = 0,
    global_step: int = 0,
    history: list[dict] | None = None,
) -> None:
    params = dict(model.named_parameters())
    arrays: list[dict] = []
    optimizer_steps: dict[str, int] = {}

    entries: list[tuple[str, bytes]] = []
    for name, param in params.items():
        data = param.detach().cpu().numpy()
        entries.append((f"arrays/{name}.npy", _npy_bytes(data)))
        arrays.append({"name": name, "shape": list(data.shape), "dtype": str(data.dtype)})

    if optimizer is not None:
        state = optimizer.state
        for name, param in params.items():
            if param not in state or "exp_avg" not in state[param]:
                continue
            slot = state[param]
            optimizer_steps[name] = int(slot["step"])
            for key in ("exp_avg", "exp_avg_sq"):
                entries.append(
                    (f"optim/{name}.{key}.npy", _npy_bytes(slot[key].detach().cpu().numpy()))
                )

    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "config_hash": config.arch_hash(),
        "epoch": epoch,
        "global_step": global_step,
        "optimizer_steps": optimizer_steps,
        "history": history or [],
        "arrays": arrays,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        archive.writestr("manifest.json", json.dumps(manifest, indent=1))
        for name, payload in entries:
            archive.writestr(name, payload)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as archive:
            manifest = json.loads(archive.read("manifest.json"))
            if manifest.get("format_version") != FORMAT_VERSION:
                raise CheckpointError(
                    f"unsupported checkpoint format {manifest.get('format_version')}"
                )
            arrays: dict[str, np.ndarray] = {}
            for entry in archive.namelist():
                if entry == "manifest.json":
                    continue
                arrays[entry] = np.load(io.BytesIO(archive.read(entry)))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc

    config = RunConfig.from_dict(manifest["config"])
    return Checkpoint(
        config=config,
        config_hash=manifest["config_hash"],
        epoch=int(manifest["epoch"]),
        global_step=int(manifest["global_step"]),
        arrays=arrays,
        optimizer_steps={k: int(v) for k, v in manifest["optimizer_steps"].items()},
        history=list(manifest.get("history", [])),
    )


def verify_hash(ckpt: Checkpoint, *, force: bool = False) -> None:
    expected = ckpt.config.arch_hash()
    if ckpt.config_hash != expected and not force:
        raise CheckpointError(
            f"checkpoint hash {ckpt.config_hash} does not match this code version's "
            f"{expected}; pass force/--force to override"
        )


def restore_model(model: torch.nn.Module, ckpt: Checkpoint, *, force: bool = False) -> None:
    verify_hash(ckpt, force=force)
    params = dict(model.named_parameters())
    for name, param in params.items():
        key = f"arrays/{name}.npy"
        if key not in ckpt.arrays:
            raise CheckpointError(f"checkpoint is missing parameter {name}")
        stored = torch.from_numpy(ckpt.arrays[key].copy())
        if stored.shape != param.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {tuple(stored.shape)} "
                f"vs model {tuple(param.shape)}"
            )
        with torch.no_grad():
            param.copy_(stored)


def restore_optimizer(
    optimizer: torch.optim.AdamW, model: torch.nn.Module, ckpt: Checkpoint
) -> None:
    params = dict(model.named_parameters())
    for name, steps in ckpt.optimizer_steps.items():
        param = params.get(name)
        if param is None:
            raise CheckpointError(f"optimizer state for unknown parameter {name}")
        slot = optimizer.state[param]
        slot["step"] = torch.tensor(float(steps))
        for key in ("exp_avg", "exp_avg_sq"):
            entry = f"optim/{name}.{key}.npy"
            if entry not in ckpt.arrays:
                raise CheckpointError(f"checkpoint is missing {entry}")
            slot[key] = torch.from_numpy(ckpt.arrays[entry].copy())
