"""Spatial map and token value types shared across the pipeline.

The per-pixel uncertainty prior travels through the whole pipeline in
logit space and is only converted to probabilities at the points of use.
Logit-valued and probability-valued maps are therefore distinct types:
spatial resampling is defined for :class:`LogitMap` only, which lets the
test suite verify that no probability map is ever interpolated.

Conventions fixed here (and relied on by the golden tests):

* bilinear resampling uses half-pixel centers (``align_corners=False``),
* the box blur is a 3x3 uniform kernel with reflect padding,
* spatial flattening is row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


def _check_map(values: torch.Tensor, kind: str) -> None:
    if not isinstance(values, torch.Tensor):
        raise TypeError(f"{kind} expects a torch.Tensor, got {type(values).__name__}")
    if values.ndim != 4 or values.shape[1] != 1:
        raise ValueError(f"{kind} expects shape (B, 1, H, W), got {tuple(values.shape)}")
    if values.shape[2] < 1 or values.shape[3] < 1:
        raise ValueError(f"{kind} needs height and width >= 1, got {tuple(values.shape)}")
    if not bool(torch.isfinite(values).all()):
        raise ValueError(f"{kind} contains non-finite entries")


@dataclass(frozen=True, eq=False)
class LogitMap:
    """Single-channel spatial map of real-valued logits, shape (B, 1, H, W).

    ``stride`` tags the resolution the map lives at; ``None`` means full
    image resolution.
    """

    values: torch.Tensor
    stride: int | None = None

    def __post_init__(self) -> None:
        _check_map(self.values, "LogitMap")

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[2]

    @property
    def width(self) -> int:
        return self.values.shape[3]


@dataclass(frozen=True, eq=False)
class ProbMap:
    """Single-channel spatial map with entries in [0, 1], shape (B, 1, H, W)."""

    values: torch.Tensor
    stride: int | None = None

    def __post_init__(self) -> None:
        _check_map(self.values, "ProbMap")
        if bool((self.values < 0).any()) or bool((self.values > 1).any()):
            raise ValueError("ProbMap entries must lie in [0, 1]")

    @property
    def batch(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[2]

    @property
    def width(self) -> int:
        return self.values.shape[3]


@dataclass(frozen=True, eq=False)
class TokenGrid:
    """Flattened spatial tokens (B, N, C) with their grid layout (H, W).

    Tokens are stored row-major: token ``y * W + x`` sits at grid cell
    ``(y, x)``.
    """

    tokens: torch.Tensor
    hw: tuple[int, int]
    stride: int

    def __post_init__(self) -> None:
        if self.tokens.ndim != 3:
            raise ValueError(f"TokenGrid expects (B, N, C), got {tuple(self.tokens.shape)}")
        h, w = self.hw
        if self.tokens.shape[1] != h * w:
            raise ValueError(
                f"token count {self.tokens.shape[1]} does not match grid {h}x{w}"
            )

    @property
    def batch(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[2]

    def grid(self) -> torch.Tensor:
        """Return the tokens as a (B, C, H, W) feature map."""
        b, n, c = self.tokens.shape
        h, w = self.hw
        return self.tokens.transpose(1, 2).reshape(b, c, h, w)

    @classmethod
    def from_grid(cls, features: torch.Tensor, stride: int) -> "TokenGrid":
        b, c, h, w = features.shape
        return cls(features.flatten(2).transpose(1, 2), (h, w), stride)


@dataclass(frozen=True, eq=False)
class TextTokens:
    """Embedded expression tokens (B, L, C) with a padding mask (B, L).

    ``pad_mask`` is True where a token must be ignored. Every batch row
    must keep at least one real token.
    """

    embeddings: torch.Tensor
    pad_mask: torch.Tensor

    def __post_init__(self) -> None:
        if self.embeddings.ndim != 3:
            raise ValueError(
                f"TextTokens expects (B, L, C), got {tuple(self.embeddings.shape)}"
            )
        if self.embeddings.shape[1] < 1:
            raise ValueError("TextTokens needs sequence length >= 1")
        if self.pad_mask.shape != self.embeddings.shape[:2]:
            raise ValueError(
                f"pad mask shape {tuple(self.pad_mask.shape)} does not match "
                f"embeddings {tuple(self.embeddings.shape[:2])}"
            )
        if self.pad_mask.dtype != torch.bool:
            raise ValueError("pad mask must be boolean")
        if bool(self.pad_mask.all(dim=1).any()):
            raise ValueError("every batch row needs at least one non-ignored token")

    @property
    def length(self) -> int:
        return self.embeddings.shape[1]


PYRAMID_STRIDES = (4, 8, 16, 32)


@dataclass(frozen=True, eq=False)
class FeaturePyramid:
    """Four token grids at strides 4, 8, 16, 32 sharing one embedding width.

    ``detail`` optionally carries the encoder's full-resolution stem
    features (B, C_d, H, W) for the decoder's boundary head; it rides along
    unchanged through level updates.
    """

    levels: tuple[TokenGrid, ...]
    detail: torch.Tensor | None = None

    def __post_init__(self) -> None:
        strides = tuple(level.stride for level in self.levels)
        if strides != PYRAMID_STRIDES:
            raise ValueError(f"pyramid needs strides {PYRAMID_STRIDES}, got {strides}")
        widths = {level.channels for level in self.levels}
        if len(widths) != 1:
            raise ValueError(f"pyramid levels disagree on embedding width: {widths}")

    def level(self, stride: int) -> TokenGrid:
        for lvl in self.levels:
            if lvl.stride == stride:
                return lvl
        raise ValueError(f"pyramid has no stride-{stride} level")

    def replace(self, updates: dict[int, TokenGrid]) -> "FeaturePyramid":
        """Return a new pyramid with the given strides swapped out."""
        out = []
        for lvl in self.levels:
            new = updates.get(lvl.stride, lvl)
            if new.stride != lvl.stride or new.hw != lvl.hw:
                raise ValueError(f"replacement for stride {lvl.stride} changes layout")
            out.append(new)
        return FeaturePyramid(tuple(out), self.detail)


def resize_logits(
    logits: LogitMap, target_h: int, target_w: int, stride: int | None = None
) -> LogitMap:
    """Bilinearly resample a logit map to ``(target_h, target_w)``.

    Resampling happens directly on logit values with half-pixel centers
    (``align_corners=False``). Probability maps are rejected: converting
    to probabilities before resampling would saturate and shift the prior.
    A same-size call returns the input unchanged.
    """
    if not isinstance(logits, LogitMap):
        raise TypeError(
            f"resize_logits operates on LogitMap only, got {type(logits).__name__}; "
            "convert with to_prob() *after* resizing"
        )
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target size must be >= 1, got ({target_h}, {target_w})")
    if (target_h, target_w) == (logits.height, logits.width):
        return logits if stride is None or stride == logits.stride else LogitMap(
            logits.values, stride
        )
    resized = F.interpolate(
        logits.values, size=(target_h, target_w), mode="bilinear", align_corners=False
    )
    return LogitMap(resized, stride)


def _reflect_index(n: int, device: torch.device) -> torch.Tensor:
    # Edge-inclusive mirror padding by one on each side (a width-1 reflection
    # repeats the edge sample), so a centered impulse spreads to exactly 1/9
    # everywhere on a 3x3 map. A size-1 axis reflects onto itself.
    idx = [0, *range(n), n - 1]
    return torch.tensor(idx, dtype=torch.long, device=device)


def _box_blur(values: torch.Tensor) -> torch.Tensor:
    h, w = values.shape[-2:]
    padded = values.index_select(-2, _reflect_index(h, values.device))
    padded = padded.index_select(-1, _reflect_index(w, values.device))
    total = torch.zeros_like(values)
    for dy in range(3):
        for dx in range(3):
            total = total + padded[..., dy : dy + h, dx : dx + w]
    return total / 9.0


def blur(spatial_map, enabled: bool = True):
    """3x3 uniform box filter with mirrored edges; identity when disabled.

    Accepts either map type and returns the same type. Probability maps
    are clamped back into [0, 1] to absorb float rounding.
    """
    if not isinstance(spatial_map, (LogitMap, ProbMap)):
        raise TypeError(f"blur expects LogitMap or ProbMap, got {type(spatial_map).__name__}")
    if not enabled:
        return spatial_map
    smoothed = _box_blur(spatial_map.values)
    if isinstance(spatial_map, ProbMap):
        return ProbMap(smoothed.clamp(0.0, 1.0), spatial_map.stride)
    return LogitMap(smoothed, spatial_map.stride)


def to_prob(logits: LogitMap) -> ProbMap:
    """Elementwise logistic sigmoid of a logit map."""
    if not isinstance(logits, LogitMap):
        raise TypeError(f"to_prob expects a LogitMap, got {type(logits).__name__}")
    return ProbMap(torch.sigmoid(logits.values), logits.stride)


def logits_to_mask(logits: LogitMap) -> torch.Tensor:
    """Hard boolean prediction: sigmoid(v) > 0.5, i.e. v > 0 (strict).

    A logit of exactly 0 (probability 0.5) counts as background.
    """
    return logits.values > 0


def flatten_map(spatial_map: LogitMap) -> torch.Tensor:
    """Row-major flatten of a (B, 1, H, W) map into a (B, H*W, 1) column."""
    if not isinstance(spatial_map, LogitMap):
        raise TypeError(f"flatten_map expects a LogitMap, got {type(spatial_map).__name__}")
    return spatial_map.values.flatten(2).transpose(1, 2)


def reshape_tokens(
    column: torch.Tensor, height: int, width: int, stride: int | None = None
) -> LogitMap:
    """Inverse of :func:`flatten_map`: (B, H*W, 1) back to a (B, 1, H, W) map."""
    if column.ndim != 3 or column.shape[2] != 1:
        raise ValueError(f"expected a (B, N, 1) column, got {tuple(column.shape)}")
    if column.shape[1] != height * width:
        raise ValueError(
            f"column length {column.shape[1]} does not match grid {height}x{width}"
        )
    values = column.transpose(1, 2).reshape(column.shape[0], 1, height, width)
    return LogitMap(values, stride)


def require_binary(values: torch.Tensor, what: str = "mask") -> None:
    """Reject tensors whose entries are not exactly 0 or 1."""
    if not bool(((values == 0) | (values == 1)).all()):
        raise ValueError(f"{what} must be binary (entries in {{0, 1}})")
