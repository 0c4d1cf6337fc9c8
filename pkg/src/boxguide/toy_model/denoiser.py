"""Small conditional U-Net whose text conditioning enters only through
cross-attention, so every forward pass yields usable attention maps."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from ..attention import AttentionLayer, AttentionStack, cross_attention, self_attention
from ..numeric_core import DimensionError, Tensor
from .vocab import DEFAULT_VOCAB


@dataclass(frozen=True)
class DenoiserConfig:
    vocab_size: int = len(DEFAULT_VOCAB)
    context_length: int = DEFAULT_VOCAB.context_length
    image_size: int = 32
    channels: int = 3
    base: int = 32
    embed_dim: int = 64
    attn_dim: int = 64
    time_dim: int = 64
    groups: int = 8

    def to_dict(self) -> dict:
        return asdict(self)


def timestep_embedding(t: Tensor, dim: int) -> Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, time_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.temb = nn.Linear(time_dim, cout)
        self.norm2 = nn.GroupNorm(groups, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class AttentionBlock(nn.Module):
    """Joint self- and cross-attention sharing one pixel query projection."""

    def __init__(self, channels: int, embed_dim: int, attn_dim: int, groups: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)
        self.q = nn.Linear(channels, attn_dim, bias=False)
        self.k_self = nn.Linear(channels, attn_dim, bias=False)
        self.v_self = nn.Linear(channels, attn_dim, bias=False)
        self.k_text = nn.Linear(embed_dim, attn_dim, bias=False)
        self.v_text = nn.Linear(embed_dim, attn_dim, bias=False)
        self.out = nn.Linear(2 * attn_dim, channels)

    def forward(self, x, text):
        b, c, h, w = x.shape
        flat = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q = self.q(flat)
        a_self = self_attention(q, self.k_self(flat))
        a_cross = cross_attention(q, self.k_text(text))
        mixed = torch.cat([a_self @ self.v_self(flat), a_cross @ self.v_text(text)], dim=-1)
        out = self.out(mixed).transpose(1, 2).reshape(b, c, h, w)
        return x + out, AttentionLayer(a_cross, a_self, (h, w))


class ToyDenoiser(nn.Module):
    def __init__(self, config: DenoiserConfig | None = None):
        super().__init__()
        cfg = config or DenoiserConfig()
        self.config = cfg
        c1, c2 = cfg.base, 2 * cfg.base
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
        self.position_embedding = nn.Parameter(torch.zeros(cfg.context_length, cfg.embed_dim))
        self.time_mlp = nn.Sequential(nn.Linear(cfg.time_dim, cfg.time_dim), nn.SiLU(), nn.Linear(cfg.time_dim, cfg.time_dim))
        self.conv_in = nn.Conv2d(cfg.channels, c1, 3, padding=1)
        self.res_hi = ResBlock(c1, c1, cfg.time_dim, cfg.groups)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.res_mid = ResBlock(c2, c2, cfg.time_dim, cfg.groups)
        self.attn_mid = AttentionBlock(c2, cfg.embed_dim, cfg.attn_dim, cfg.groups)
        self.down2 = nn.Conv2d(c2, c2, 3, stride=2, padding=1)
        self.res_lo = ResBlock(c2, c2, cfg.time_dim, cfg.groups)
        self.attn_lo = AttentionBlock(c2, cfg.embed_dim, cfg.attn_dim, cfg.groups)
        self.up_mid = ResBlock(2 * c2, c2, cfg.time_dim, cfg.groups)
        self.up_hi = ResBlock(c2 + c1, c1, cfg.time_dim, cfg.groups)
        self.norm_out = nn.GroupNorm(cfg.groups, c1)
        self.conv_out = nn.Conv2d(c1, cfg.channels, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)
        self.double()

    def embed_tokens(self, tokens: Tensor) -> Tensor:
        return self.token_embedding(tokens) + self.position_embedding[: tokens.shape[-1]]

    def forward(self, z: Tensor, tokens: Tensor, t: Tensor) -> tuple[Tensor, AttentionStack]:
        cfg = self.config
        if z.dim() != 4 or z.shape[1:] != (cfg.channels, cfg.image_size, cfg.image_size):
            raise DimensionError(f"expected latent (B, {cfg.channels}, {cfg.image_size}, {cfg.image_size}), got {tuple(z.shape)}")
        b = z.shape[0]
        if tokens.dim() == 1:
            tokens = tokens.expand(b, -1)
        t = torch.as_tensor(t).reshape(-1).expand(b)
        temb = self.time_mlp(timestep_embedding(t, cfg.time_dim).to(z.dtype))
        text = self.embed_tokens(tokens)

        h_hi = self.res_hi(self.conv_in(z), temb)
        h = self.res_mid(self.down1(h_hi), temb)
        h_mid, layer_mid = self.attn_mid(h, text)
        h = self.res_lo(self.down2(h_mid), temb)
        h, layer_lo = self.attn_lo(h, text)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.up_mid(torch.cat([h, h_mid], dim=1), temb)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.up_hi(torch.cat([h, h_hi], dim=1), temb)
        eps = self.conv_out(F.silu(self.norm_out(h)))
        return eps, AttentionStack([layer_mid, layer_lo])


def predict_noise(model: ToyDenoiser, z_t: Tensor, tokens, t) -> tuple[Tensor, AttentionStack]:
    """Noise prediction and attention stack for one or a batch of latents."""
    single = z_t.dim() == 3
    if single:
        z_t = z_t.unsqueeze(0)
    tokens = torch.as_tensor(tokens, dtype=torch.long)
    eps, stack = model(z_t, tokens, torch.as_tensor(t))
    if single:
        eps = eps[0]
    return eps, stack
