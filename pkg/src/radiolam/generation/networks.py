"""Compact reference denoiser and router networks."""

from __future__ import annotations

import hashlib
import json
import math

import torch
from torch import nn
from torch.nn import functional as F

IN_CHANNELS = 6
WIDTH = 32
EMB_DIM = 32
ROUTER_IN = 2
ROUTER_WIDTH = 8


def timestep_embedding(t: torch.Tensor, dim: int = EMB_DIM) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


def init_uniform(module: nn.Module, generator: torch.Generator) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=generator)
                m.bias.uniform_(-bound, bound, generator=generator)


class Denoiser(nn.Module):
    """3x3 conv in, two residual conv blocks, 3x3 conv out; timestep as a channel bias."""

    def __init__(self, width: int = WIDTH):
        super().__init__()
        self.conv_in = nn.Conv2d(IN_CHANNELS, width, 3, padding=1)
        self.time = nn.Linear(EMB_DIM, width)
        self.block1 = nn.Conv2d(width, width, 3, padding=1)
        self.block2 = nn.Conv2d(width, width, 3, padding=1)
        self.conv_out = nn.Conv2d(width, 1, 3, padding=1)

    def forward(self, x_t: torch.Tensor, cond: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        h = self.conv_in(torch.cat([x_t, cond], dim=1))
        h = F.relu(h + self.time(timestep_embedding(t))[:, :, None, None])
        h = h + F.relu(self.block1(h))
        h = h + F.relu(self.block2(h))
        return self.conv_out(h)


class Router(nn.Module):
    def __init__(self, n_experts: int):
        super().__init__()
        self.conv = nn.Conv2d(ROUTER_IN, ROUTER_WIDTH, 3, padding=1)
        self.head = nn.Linear(ROUTER_WIDTH, n_experts)

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(F.relu(self.conv(x)).mean(dim=(2, 3)))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.logits(x), dim=-1)


def architecture(n_experts: int) -> dict:
    return {
        "denoiser": {"in": IN_CHANNELS, "width": WIDTH, "emb": EMB_DIM, "blocks": 2, "kernel": 3},
        "router": {"in": ROUTER_IN, "width": ROUTER_WIDTH, "experts": n_experts},
    }


def architecture_hash(n_experts: int) -> str:
    blob = json.dumps(architecture(n_experts), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
