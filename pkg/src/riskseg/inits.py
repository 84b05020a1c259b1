"""Generator-fed parameter initialization.

Each model component re-initializes its parameters from a dedicated
:class:`torch.Generator` after construction. Two builds that share a seed
therefore get identical weights for the components they have in common,
no matter which optional components exist around them. The walk below
verifies total coverage: every parameter is either a standard layer it
knows how to fill or one the caller declared it will set itself, so
construction-order-dependent leftovers cannot creep in.
"""

from __future__ import annotations

import math
from typing import Iterable

import torch
from torch import nn


def uniform_(tensor: torch.Tensor, bound: float, gen: torch.Generator) -> None:
    with torch.no_grad():
        tensor.copy_((torch.rand(tensor.shape, generator=gen) * 2 - 1) * bound)


def normal_(tensor: torch.Tensor, std: float, gen: torch.Generator) -> None:
    with torch.no_grad():
        tensor.copy_(torch.randn(tensor.shape, generator=gen) * std)


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def _linear_(module: nn.Linear, gen: torch.Generator) -> None:
    fan_in = module.weight.shape[1]
    uniform_(module.weight, 1.0 / math.sqrt(fan_in), gen)
    if module.bias is not None:
        with torch.no_grad():
            module.bias.zero_()


def _conv_(module: nn.Conv2d, gen: torch.Generator) -> None:
    fan_in = module.weight.shape[1] * module.weight.shape[2] * module.weight.shape[3]
    normal_(module.weight, math.sqrt(2.0 / fan_in), gen)
    if module.bias is not None:
        with torch.no_grad():
            module.bias.zero_()


def _embedding_(module: nn.Embedding, gen: torch.Generator) -> None:
    normal_(module.weight, 0.02, gen)
    if module.padding_idx is not None:
        with torch.no_grad():
            module.weight[module.padding_idx].zero_()


def _attention_(module: nn.MultiheadAttention, gen: torch.Generator) -> None:
    if module.in_proj_weight is None:
        raise ValueError("attention with separate q/k/v projections is not used here")
    fan_in = module.in_proj_weight.shape[1]
    fan_out = module.in_proj_weight.shape[0] // 3
    uniform_(module.in_proj_weight, math.sqrt(6.0 / (fan_in + fan_out)), gen)
    if module.in_proj_bias is not None:
        with torch.no_grad():
            module.in_proj_bias.zero_()
    # out_proj is a Linear child and is re-initialized by the module walk.


def init_standard_modules(
    root: nn.Module, gen: torch.Generator, custom: Iterable[str] = ()
) -> None:
    """Re-initialize every standard layer under ``root`` from ``gen``.

    ``custom`` names the parameters (relative to ``root``) the caller sets
    itself afterwards. Any parameter that is neither standard nor declared
    custom raises, keeping coverage total.
    """
    handled: set[str] = set()
    for name, module in root.named_modules():
        own = [pname for pname, _ in module.named_parameters(prefix=name, recurse=False)]
        if isinstance(module, nn.Linear):
            _linear_(module, gen)
        elif isinstance(module, nn.Conv2d):
            _conv_(module, gen)
        elif isinstance(module, nn.Embedding):
            _embedding_(module, gen)
        elif isinstance(module, (nn.LayerNorm, nn.GroupNorm)):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.zero_()
        elif isinstance(module, nn.MultiheadAttention):
            _attention_(module, gen)
        else:
            continue
        handled.update(own)

    custom = set(custom)
    missing = {
        name for name, _ in root.named_parameters() if name not in handled and name not in custom
    }
    if missing:
        raise TypeError(f"parameters without an initialization rule: {sorted(missing)}")
