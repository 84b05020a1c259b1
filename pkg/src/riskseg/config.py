"""Run configuration: one flat, versioned key-value namespace.

The config file format is ``key = value`` lines (``#`` comments allowed)
with a mandatory ``schema_version``. Every key mirrors a RunConfig field
and can be overridden from the CLI with ``--set key=value``.

Full-scale reference values (recorded for orientation only; the desk-scale
defaults below are what this package trains): embedding width 256,
6 interaction layers, 8 attention heads, 20-token expressions, 480x480
inputs, batch 32, 40 epochs, AdamW at lr 5e-5 with weight decay 0.01 and
polynomial lr decay.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .backbone import BackboneConfig
from .errors import ConfigError
from .losses import LossWeights
from .refine import RefineConfig
from .scorer import UncLossConfig
from .synthdata import SceneConfig, VOCAB_SIZE

SCHEMA_VERSION = 1

# Bumped whenever the model architecture or checkpoint layout changes in a
# way that invalidates older checkpoints.
ARCH_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION

    # data
    canvas: int = 64
    train_samples: int = 600
    val_samples: int = 100
    test_samples: int = 200
    data_seed: int = 7
    text_len: int = 12

    # model
    embed_width: int = 32
    attention_heads: int = 4
    interaction_layers: int = 2

    # feature flags (all independent; base = all off)
    use_unc_loss: bool = True
    use_gated_fusion: bool = True
    use_refinement: bool = True

    # uncertainty loss
    unc_delta: float = 0.5
    unc_lambda_s: float = 1.0
    unc_eps: float = 1.0
    warmup_steps: int = -1  # -1: one epoch of the train split
    target_blur: bool = False

    # refinement
    refine_tau: float = 0.35
    refine_temperature: float = 0.1
    mask_blur: bool = True

    # loss weights
    lambda_unc: float = 0.5
    lambda_ref: float = 1.0

    # optimization
    lr: float = 1e-3
    weight_decay: float = 0.01
    poly_power: float = 0.9
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {self.schema_version}; "
                f"this build reads version {SCHEMA_VERSION}"
            )
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.warmup_steps < -1:
            raise ConfigError("warmup_steps must be >= 0, or -1 for one epoch")

    # ---- derived component configs ------------------------------------

    def scene_config(self) -> SceneConfig:
        return SceneConfig(canvas=self.canvas, text_len=self.text_len)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            embed_width=self.embed_width,
            attention_heads=self.attention_heads,
            interaction_layers=self.interaction_layers,
            vocab_size=VOCAB_SIZE,
            max_text_len=self.text_len,
        )

    def steps_per_epoch(self) -> int:
        return -(-self.train_samples // self.batch_size)

    def resolved_warmup_steps(self) -> int:
        return self.steps_per_epoch() if self.warmup_steps == -1 else self.warmup_steps

    def unc_loss_config(self) -> UncLossConfig:
        return UncLossConfig(
            delta=self.unc_delta,
            lambda_s=self.unc_lambda_s,
            eps=self.unc_eps,
            warmup_steps=self.resolved_warmup_steps(),
            target_blur=self.target_blur,
        )

    def refine_config(self) -> RefineConfig:
        return RefineConfig(
            tau=self.refine_tau,
            temperature=self.refine_temperature,
            lambda_ref=self.lambda_ref,
            mask_blur=self.mask_blur,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(lambda_unc=self.lambda_unc, lambda_ref=self.lambda_ref)

    # ---- (de)serialization ---------------------------------------------

    def to_dict(self) -> dict[str, object]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict[str, object]) -> "RunConfig":
        known = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)  # type: ignore[arg-type]

    def replace(self, **updates) -> "RunConfig":
        return dataclasses.replace(self, **updates)

    def save(self, path: str | Path) -> None:
        lines = [f"{name} = {_format_value(value)}" for name, value in self.to_dict().items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values: dict[str, object] = {}
        for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        return cls.from_dict(_parse_values(values))

    def arch_hash(self) -> str:
        """Hash of everything that must match for a checkpoint to load."""
        arch_keys = (
            "canvas",
            "text_len",
            "embed_width",
            "attention_heads",
            "interaction_layers",
            "use_unc_loss",
            "use_gated_fusion",
            "use_refinement",
        )
        payload = f"arch:{ARCH_VERSION}|" + "|".join(
            f"{k}={getattr(self, k)}" for k in arch_keys
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _format_value(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _parse_values(raw: dict[str, object]) -> dict[str, object]:
    types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    parsed: dict[str, object] = {}
    for key, value in raw.items():
        if key not in types:
            raise ConfigError(f"unknown config key: {key}")
        if not isinstance(value, str):
            parsed[key] = value
            continue
        kind = types[key]
        try:
            if kind in ("bool", bool):
                lowered = value.lower()
                if lowered not in ("true", "false"):
                    raise ValueError(f"expected true/false, got {value!r}")
                parsed[key] = lowered == "true"
            elif kind in ("int", int):
                parsed[key] = int(value)
            elif kind in ("float", float):
                parsed[key] = float(value)
            else:
                parsed[key] = value
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    return parsed


def parse_overrides(pairs: list[str]) -> dict[str, object]:
    """Parse ``--set key=value`` CLI overrides into typed config values."""
    raw: dict[str, object] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        raw[key.strip()] = value.strip()
    return _parse_values(raw)
