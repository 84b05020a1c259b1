"""Minimal two-tower encoder/decoder honoring the pipeline's tensor contracts.

Layer plan (desk scale):

* image encoder — four strided conv stages producing strides 4/8/16/32
  with widths from ``pyramid_channels``, each projected 1x1 to the shared
  embedding width; fixed 2-D sinusoidal position codes are added when the
  stages are flattened to tokens.
* text encoder — learned id embeddings (pad id 0) plus learned positions.
* interaction stage — ``interaction_layers`` post-norm blocks of
  text cross-attention, token self-attention, and a feed-forward; one
  stack shared by every level it is applied to.
* decoder — the interaction stage runs on strides 8/16/32, then a
  top-down merge (nearest upsample + add + one conv) descends to the
  stride-4 mask feature, which a 1x1 head turns into full-resolution
  foreground logits (1x1-then-bilinear commutes with the upsample).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .inits import init_standard_modules, normal_
from .maps import FeaturePyramid, LogitMap, TextTokens, TokenGrid

PYRAMID_STRIDES = (4, 8, 16, 32)
DECODER_STRIDES = (8, 16, 32)


@dataclass(frozen=True)
class BackboneConfig:
    embed_width: int = 32
    pyramid_channels: tuple[int, int, int, int] = (16, 32, 48, 64)
    interaction_layers: int = 2
    attention_heads: int = 4
    vocab_size: int = 17
    max_text_len: int = 12

    def __post_init__(self) -> None:
        if self.embed_width % self.attention_heads != 0:
            raise ValueError("embed_width must be divisible by attention_heads")
        if self.max_text_len < 1:
            raise ValueError("max_text_len must be >= 1")
        if len(self.pyramid_channels) != 4:
            raise ValueError("pyramid_channels needs one width per stride")


def position_codes(h: int, w: int, dim: int, dtype: torch.dtype) -> torch.Tensor:
    """Fixed 2-D sinusoidal position codes, shape (h*w, dim), row-major."""
    if dim % 4 != 0:
        raise ValueError("position code width must be divisible by 4")
    quarter = dim // 4
    freqs = torch.exp(
        -math.log(1000.0) * torch.arange(quarter, dtype=torch.float64) / max(quarter, 1)
    )

    def axis(n: int) -> torch.Tensor:
        angles = torch.arange(n, dtype=torch.float64)[:, None] * freqs[None, :]
        return torch.cat([angles.sin(), angles.cos()], dim=1)  # (n, dim/2)

    ys = axis(h)[:, None, :].expand(h, w, 2 * quarter)
    xs = axis(w)[None, :, :].expand(h, w, 2 * quarter)
    return torch.cat([ys, xs], dim=2).reshape(h * w, dim).to(dtype)


class _ConvStage(nn.Module):
    # No normalization layers anywhere in the conv path: per-sample feature
    # statistics must not depend on what else is in the scene, or content
    # matching against the text stops transferring across scenes.
    def __init__(self, cin: int, cout: int, downsample: int = 1):
        super().__init__()
        layers: list[nn.Module] = []
        for _ in range(downsample):
            layers += [nn.Conv2d(cin, cout, 3, stride=2, padding=1), nn.ReLU(inplace=True)]
            cin = cout
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class ImageEncoder(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        p = cfg.pyramid_channels
        self.stem = nn.Sequential(nn.Conv2d(3, p[0], 3, padding=1), nn.ReLU(inplace=True))
        self.stage4 = _ConvStage(p[0], p[0], downsample=2)
        self.stage8 = _ConvStage(p[0], p[1], downsample=1)
        self.stage16 = _ConvStage(p[1], p[2], downsample=1)
        self.stage32 = _ConvStage(p[2], p[3], downsample=1)
        self.projections = nn.ModuleList(
            [nn.Conv2d(c, cfg.embed_width, 1) for c in p]
        )
        self.embed_width = cfg.embed_width

    def forward(self, image: torch.Tensor) -> FeaturePyramid:
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) image, got {tuple(image.shape)}")
        h, w = image.shape[2], image.shape[3]
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(
                f"image size {h}x{w} must be divisible by 32; pad to "
                f"{math.ceil(h / 32) * 32}x{math.ceil(w / 32) * 32} first"
            )
        feats = []
        detail = self.stem(image)
        x = detail
        for stage in (self.stage4, self.stage8, self.stage16, self.stage32):
            x = stage(x)
            feats.append(x)
        levels = [
            TokenGrid.from_grid(proj(feat), stride)
            for feat, proj, stride in zip(feats, self.projections, PYRAMID_STRIDES)
        ]
        return FeaturePyramid(tuple(levels), detail)


class TextEncoder(nn.Module):
    """Token-id embeddings with learned positions; id 0 is the pad.

    The final layer norm brings text features to the same scale as the
    visual tokens, which the cross-attention relies on.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.vocab_size = cfg.vocab_size
        self.embed = nn.Embedding(cfg.vocab_size, cfg.embed_width, padding_idx=0)
        self.positions = nn.Parameter(torch.zeros(cfg.max_text_len, cfg.embed_width))
        self.norm = nn.LayerNorm(cfg.embed_width)

    def forward(self, token_ids: torch.Tensor) -> TextTokens:
        if token_ids.ndim != 2:
            raise ValueError(f"expected (B, L) token ids, got {tuple(token_ids.shape)}")
        if token_ids.shape[1] > self.positions.shape[0]:
            raise ValueError(
                f"sequence length {token_ids.shape[1]} exceeds max "
                f"{self.positions.shape[0]}"
            )
        if bool((token_ids < 0).any()) or bool((token_ids >= self.vocab_size).any()):
            raise ValueError(f"token ids must lie in [0, {self.vocab_size})")
        pad_mask = token_ids == 0
        if bool(pad_mask.all(dim=1).any()):
            raise ValueError("a batch row contains only padding tokens")
        emb = self.norm(self.embed(token_ids) + self.positions[: token_ids.shape[1]])
        return TextTokens(emb, pad_mask)

    def extra_parameters(self) -> list[str]:
        return ["positions"]

    def reset_extra(self, gen: torch.Generator) -> None:
        normal_(self.positions, 0.02, gen)


class SimilarityInjector(nn.Module):
    """Add a text-match feature to visual tokens before interaction.

    Each token's dot product against the pooled text embedding (both
    linearly projected) scales a learned direction vector that is added to
    the token. This makes "does this position match the description" an
    explicit bilinear feature instead of something the attention stack
    must rediscover, and one parameter set serves every level.
    """

    def __init__(self, width: int):
        super().__init__()
        self.vis = nn.Linear(width, width, bias=False)
        self.txt = nn.Linear(width, width, bias=False)
        self.direction = nn.Parameter(torch.zeros(width))
        self.width = width

    def pooled_text(self, text: TextTokens) -> torch.Tensor:
        keep = (~text.pad_mask).to(text.embeddings.dtype)[:, :, None]
        return (text.embeddings * keep).sum(dim=1) / keep.sum(dim=1)

    def scores(self, level: TokenGrid, text: TextTokens) -> torch.Tensor:
        query = self.txt(self.pooled_text(text))[:, None, :]  # (B, 1, C)
        return (self.vis(level.tokens) * query).sum(-1, keepdim=True) / math.sqrt(self.width)

    def forward(self, level: TokenGrid, text: TextTokens) -> TokenGrid:
        tokens = level.tokens + self.scores(level, text) * self.direction
        return TokenGrid(tokens, level.hw, level.stride)

    def extra_parameters(self) -> list[str]:
        return ["direction"]

    def reset_extra(self, gen: torch.Generator) -> None:
        normal_(self.direction, 1.0 / math.sqrt(self.width), gen)


class InteractionBlock(nn.Module):
    """Cross-attend to text, self-attend spatially, then feed-forward.

    Pre-norm residual wiring. Position codes enter only the self-attention
    queries/keys: the residual stream (and everything the mask decoder
    later convolves) stays position-free, so content matching cannot key
    on absolute location.
    """

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.cross = nn.MultiheadAttention(width, heads, batch_first=True)
        self.self_attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.ff = nn.Sequential(nn.Linear(width, 2 * width), nn.ReLU(), nn.Linear(2 * width, width))
        self.norm1 = nn.LayerNorm(width)
        self.norm2 = nn.LayerNorm(width)
        self.norm3 = nn.LayerNorm(width)

    def forward(
        self, tokens: torch.Tensor, text: TextTokens, codes: torch.Tensor
    ) -> torch.Tensor:
        attended, _ = self.cross(
            self.norm1(tokens), text.embeddings, text.embeddings,
            key_padding_mask=text.pad_mask, need_weights=False,
        )
        tokens = tokens + attended
        normed = self.norm2(tokens)
        located = normed + codes
        mixed, _ = self.self_attn(located, located, normed, need_weights=False)
        tokens = tokens + mixed
        return tokens + self.ff(self.norm3(tokens))


class InteractionStage(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.blocks = nn.ModuleList(
            InteractionBlock(cfg.embed_width, cfg.attention_heads)
            for _ in range(cfg.interaction_layers)
        )
        self.final_norm = nn.LayerNorm(cfg.embed_width)

    def forward(self, level: TokenGrid, text: TextTokens) -> TokenGrid:
        tokens = level.tokens
        codes = position_codes(*level.hw, tokens.shape[2], tokens.dtype).to(tokens.device)
        for block in self.blocks:
            tokens = block(tokens, text, codes)
        return TokenGrid(self.final_norm(tokens), level.hw, level.stride)


@dataclass(frozen=True, eq=False)
class DecoderOutput:
    """Full-resolution foreground logits plus the stride-4 mask feature."""

    p_fg: LogitMap
    mask_features: torch.Tensor  # (B, C, H/4, W/4)

    def features_at(self, h: int, w: int) -> torch.Tensor:
        if self.mask_features.shape[-2:] == (h, w):
            return self.mask_features
        return F.interpolate(
            self.mask_features, size=(h, w), mode="bilinear", align_corners=False
        )


class Decoder(nn.Module):
    """Top-down merge to the stride-4 mask feature and the logit head.

    The head adds two terms: a coarse per-cell dot product against the
    pooled text embedding carrying the content matching ("is this the
    described object"), and a boundary head that combines the upsampled
    mask feature with the encoder's full-resolution stem features so the
    mask edge can be placed from local pixel evidence.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        width = cfg.embed_width

        def merge() -> nn.Module:
            return nn.Sequential(
                nn.Conv2d(width, width, 3, padding=1),
                nn.ReLU(inplace=True),
            )

        self.merge16 = merge()
        self.merge8 = merge()
        self.merge4 = merge()
        self.sim_vis = nn.Conv2d(width, width, 1)
        self.sim_txt = nn.Linear(width, width)
        detail_ch = cfg.pyramid_channels[0]
        self.boundary = nn.Conv2d(width + detail_ch, 32, 3, padding=1)
        self.out = nn.Conv2d(32, 1, 1)
        self.width = width

    def forward(
        self,
        interacted: dict[int, TokenGrid],
        level4: TokenGrid,
        text: TextTokens,
        detail: torch.Tensor,
    ) -> DecoderOutput:
        g32 = interacted[32].grid()
        g16 = interacted[16].grid()
        g8 = interacted[8].grid()
        m16 = self.merge16(g16 + F.interpolate(g32, scale_factor=2, mode="nearest"))
        m8 = self.merge8(g8 + F.interpolate(m16, scale_factor=2, mode="nearest"))
        feats = self.merge4(level4.grid() + F.interpolate(m8, scale_factor=2, mode="nearest"))

        keep = (~text.pad_mask).to(text.embeddings.dtype)[:, :, None]
        pooled = (text.embeddings * keep).sum(dim=1) / keep.sum(dim=1)
        query = self.sim_txt(pooled)[:, :, None, None]
        similarity = (self.sim_vis(feats) * query).sum(dim=1, keepdim=True)

        h, w = feats.shape[2] * 4, feats.shape[3] * 4
        up = F.interpolate(feats, size=(h, w), mode="bilinear", align_corners=False)
        fine = self.out(torch.relu(self.boundary(torch.cat([up, detail], dim=1))))
        coarse = F.interpolate(
            similarity / math.sqrt(self.width), size=(h, w), mode="bilinear", align_corners=False
        )
        return DecoderOutput(LogitMap(fine + coarse), feats)


class TwoTowerBackbone(nn.Module):
    """Encoders, shared interaction stage, and mask decoder in one bundle."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.image_encoder = ImageEncoder(cfg)
        self.text_encoder = TextEncoder(cfg)
        self.similarity = SimilarityInjector(cfg.embed_width)
        self.interaction = InteractionStage(cfg)
        self.decoder = Decoder(cfg)

    def encode_image(self, image: torch.Tensor) -> FeaturePyramid:
        return self.image_encoder(image)

    def encode_text(self, token_ids: torch.Tensor) -> TextTokens:
        return self.text_encoder(token_ids)

    def interaction_stage(self, level: TokenGrid, text: TextTokens) -> TokenGrid:
        return self.interaction(level, text)

    def decode(self, pyramid: FeaturePyramid, text: TextTokens) -> DecoderOutput:
        if pyramid.detail is None:
            raise ValueError("pyramid lacks the encoder's detail features")
        interacted = {
            s: self.interaction(self.similarity(pyramid.level(s), text), text)
            for s in DECODER_STRIDES
        }
        return self.decoder(
            interacted, self.similarity(pyramid.level(4), text), text, pyramid.detail
        )

    def reset_parameters(self, gen: torch.Generator) -> None:
        custom = [f"text_encoder.{n}" for n in self.text_encoder.extra_parameters()]
        custom += [f"similarity.{n}" for n in self.similarity.extra_parameters()]
        init_standard_modules(self, gen, custom=custom)
        self.text_encoder.reset_extra(gen)
        self.similarity.reset_extra(gen)
