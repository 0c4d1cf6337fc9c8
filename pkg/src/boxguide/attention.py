"""Cross/self attention maps: computation, layer aggregation, self-attention
enhancement and min-max normalisation.

All functions accept optional leading batch dimensions.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .numeric_core import DimensionError, Tensor, softmax_rows


class EmptyStackError(ValueError):
    pass


def cross_attention(query: Tensor, key: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d)) over tokens; query (..., hw, d), key (..., n, d)."""
    if query.shape[-1] != key.shape[-1]:
        raise DimensionError(f"query dim {query.shape[-1]} != key dim {key.shape[-1]}")
    d = query.shape[-1]
    if d < 1:
        raise DimensionError("attention dimension must be >= 1")
    return softmax_rows(query @ key.transpose(-1, -2) / math.sqrt(d))


def self_attention(query: Tensor, key: Tensor) -> Tensor:
    if query.shape[-2] != key.shape[-2]:
        raise DimensionError(f"self attention needs equal pixel counts, got {query.shape[-2]} and {key.shape[-2]}")
    return cross_attention(query, key)


@dataclass
class AttentionLayer:
    cross: Tensor  # (..., h*w, n)
    self_map: Tensor  # (..., h*w, h*w)
    resolution: tuple[int, int]  # (h, w)


def upsample_cross(cross: Tensor, src: tuple[int, int], dst: tuple[int, int]) -> Tensor:
    """Nearest-neighbour upsampling of a (..., h*w, n) map to a finer grid."""
    (h, w), (H, W) = src, dst
    if H % h or W % w:
        raise DimensionError(f"cannot upsample {src} to {dst}")
    if (h, w) == (H, W):
        return cross
    fy, fx = H // h, W // w
    lead = cross.shape[:-2]
    n = cross.shape[-1]
    grid = cross.reshape(*lead, h, w, n)
    grid = grid.repeat_interleave(fy, dim=-3).repeat_interleave(fx, dim=-2)
    return grid.reshape(*lead, H * W, n)


def upsample_self(self_map: Tensor, src: tuple[int, int], dst: tuple[int, int]) -> Tensor:
    """Nearest-neighbour upsampling of both pixel axes of a self-attention map.

    Key-side mass is split evenly over the replicated cells so that rows stay
    stochastic.
    """
    (h, w), (H, W) = src, dst
    if (h, w) == (H, W):
        return self_map
    fy, fx = H // h, W // w
    lead = self_map.shape[:-2]
    rows = upsample_cross(self_map, src, dst)  # query axis
    cols = upsample_cross(rows.transpose(-1, -2), src, dst).transpose(-1, -2)
    return cols.reshape(*lead, H * W, H * W) / (fy * fx)


@dataclass
class AttentionStack:
    layers: list[AttentionLayer]
    reference_resolution: tuple[int, int] = (0, 0)
    aggregated_cross: Tensor | None = field(default=None, repr=False)
    aggregated_self: Tensor | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.aggregated_cross is None and self.layers:
            self.aggregated_cross, self.aggregated_self, self.reference_resolution = aggregate(self.layers)


def aggregate(layers: Sequence[AttentionLayer]) -> tuple[Tensor, Tensor, tuple[int, int]]:
    """Layer-mean of cross and self maps at the finest layer resolution."""
    if not layers:
        raise EmptyStackError("cannot aggregate an empty attention stack")
    ref = max((layer.resolution for layer in layers), key=lambda r: r[0] * r[1])
    cross = None
    selfm = None
    for layer in layers:
        c = upsample_cross(layer.cross, layer.resolution, ref)
        s = upsample_self(layer.self_map, layer.resolution, ref)
        cross = c if cross is None else cross + c
        selfm = s if selfm is None else selfm + s
    n_layers = len(layers)
    return cross / n_layers, selfm / n_layers, ref


def enhance(self_map: Tensor, column: Tensor, tau: int = 1) -> Tensor:
    """Propagate a phrase column through ``tau`` applications of the self map."""
    if tau < 0 or int(tau) != tau:
        raise ValueError(f"tau must be a nonnegative integer, got {tau}")
    out = column
    for _ in range(int(tau)):
        out = (self_map @ out.unsqueeze(-1)).squeeze(-1)
    return out


def normalize_reshape(v: Tensor, w: int, h: int) -> Tensor:
    """Min-max normalise ``v`` (..., h*w) and reshape to (..., h, w).

    A constant vector maps to zeros.
    """
    if v.shape[-1] != w * h:
        raise DimensionError(f"length {v.shape[-1]} != {w}x{h}")
    lo = v.amin(dim=-1, keepdim=True)
    hi = v.amax(dim=-1, keepdim=True)
    rng = hi - lo
    ok = rng > 0
    out = (v - lo) / torch.where(ok, rng, torch.ones_like(rng))
    out = torch.where(ok, out, torch.zeros_like(out))
    return out.reshape(*v.shape[:-1], h, w)


@dataclass
class EnhancedPhraseMap:
    phrase_index: int
    map: Tensor  # (..., h, w)


def phrase_maps(
    stack: AttentionStack,
    phrase_tokens: Sequence[int | Sequence[int]],
    tau: int = 1,
) -> list[EnhancedPhraseMap]:
    """Enhanced, normalised map per phrase. Multi-token phrases average their columns."""
    h, w = stack.reference_resolution
    out = []
    for tok in phrase_tokens:
        idx = [tok] if isinstance(tok, int) else list(tok)
        col = stack.aggregated_cross[..., idx].mean(dim=-1)
        enhanced = enhance(stack.aggregated_self, col, tau)
        out.append(EnhancedPhraseMap(idx[0], normalize_reshape(enhanced, w, h)))
    return out


def dump_attention(directory, step: int, phrase: int, grid, image: bool = False) -> str:
    """Write one phrase map as ``attn_t<step>_p<phrase>.txt`` (and a PNG if asked)."""
    arr = np.asarray(grid.detach().cpu() if isinstance(grid, torch.Tensor) else grid, dtype=np.float64)
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, f"attn_t{step}_p{phrase}.txt")
    np.savetxt(path, arr, fmt="%.10g", delimiter=" ")
    if image:
        from PIL import Image

        lo, hi = arr.min(), arr.max()
        scaled = np.zeros_like(arr) if hi <= lo else (arr - lo) / (hi - lo)
        Image.fromarray((scaled * 255).round().astype(np.uint8), mode="L").save(path[:-4] + ".png")
    return path


def load_attention_dump(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, dtype=np.float64))
