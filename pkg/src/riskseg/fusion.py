"""Uncertainty-gated cross-modal fusion.

A single post-fusion step between encoder and decoder: visual tokens
query the text tokens once more, and the resulting update is scaled
per position by a sigmoid-affine function of the uncertainty logits,
then folded in residually under layer norm. One parameter set serves
all three decoder input levels.
"""

from __future__ import annotations

import torch
from torch import nn

from .inits import init_standard_modules
from .maps import (
    FeaturePyramid,
    LogitMap,
    TextTokens,
    TokenGrid,
    flatten_map,
    resize_logits,
)

FUSED_STRIDES = (8, 16, 32)


def gate(uncertainty: torch.Tensor, alpha: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Map per-position uncertainty logits to fusion strengths in (0, 1)."""
    return torch.sigmoid(alpha * uncertainty + beta)


class UncertaintyGatedFusion(nn.Module):
    """Gated text injection shared across the fused pyramid levels.

    ``alpha`` starts at 1 and ``beta`` at 0 so higher uncertainty means
    stronger fusion from the first step.
    """

    def __init__(self, embed_width: int, heads: int, dropout: float = 0.1):
        super().__init__()
        self.attn = nn.MultiheadAttention(embed_width, heads, batch_first=True)
        self.proj = nn.Linear(embed_width, embed_width)
        self.drop = nn.Dropout(dropout)
        self.norm = nn.LayerNorm(embed_width)
        self.alpha = nn.Parameter(torch.tensor(1.0))
        self.beta = nn.Parameter(torch.tensor(0.0))

    def text_delta(self, level: TokenGrid, text: TextTokens) -> torch.Tensor:
        """Cross-attention update (B, N, C): visual queries over text keys/values."""
        attended, _ = self.attn(
            level.tokens, text.embeddings, text.embeddings,
            key_padding_mask=text.pad_mask, need_weights=False,
        )
        return self.drop(self.proj(attended))

    def fuse_level(
        self, level: TokenGrid, delta: torch.Tensor, gates: torch.Tensor
    ) -> TokenGrid:
        """Residual gated update with channel layer norm."""
        if gates.shape != (level.batch, level.tokens.shape[1], 1):
            raise ValueError(f"gates must be (B, N, 1), got {tuple(gates.shape)}")
        return TokenGrid(self.norm(level.tokens + gates * delta), level.hw, level.stride)

    def forward(
        self, pyramid: FeaturePyramid, text: TextTokens, uncertainty: LogitMap
    ) -> FeaturePyramid:
        """Fuse strides 8/16/32 once; the stride-4 level passes through.

        The uncertainty map must come from the stride-32 scorer; it is
        resized (in logit space) to each level and only then gated.
        """
        if uncertainty.stride != 32:
            raise ValueError(
                f"expected stride-32 uncertainty logits, got stride {uncertainty.stride}"
            )
        updates: dict[int, TokenGrid] = {}
        for stride in FUSED_STRIDES:
            level = pyramid.level(stride)
            local = resize_logits(uncertainty, *level.hw)
            gates = gate(flatten_map(local), self.alpha, self.beta)
            updates[stride] = self.fuse_level(level, self.text_delta(level, text), gates)
        return pyramid.replace(updates)

    def reset_parameters(self, gen: torch.Generator) -> None:
        init_standard_modules(self, gen, custom=["alpha", "beta"])
        with torch.no_grad():
            self.alpha.fill_(1.0)
            self.beta.fill_(0.0)
