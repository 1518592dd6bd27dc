"""Spatial self-attention gate used to modulate the vector field."""
import math
from typing import Tuple

import torch
import torch.nn as nn


def self_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """``softmax(q k^T / sqrt(d)) v`` over the last two axes (tokens x dim)."""
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ValueError(f"incompatible shapes q{tuple(q.shape)} k{tuple(k.shape)} v{tuple(v.shape)}")
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    return torch.softmax(scores, dim=-1) @ v


class QKVProjection(nn.Module):
    """Three strided ``kernel_size`` convolutions mapping F x H x W to T x d tokens."""

    def __init__(self, in_channels: int = 1, dim: int = 64, kernel_size: int = 7, stride: int = 8):
        super().__init__()
        self.stride = stride
        pad = kernel_size // 2
        self.q = nn.Conv2d(in_channels, dim, kernel_size, stride=stride, padding=pad)
        self.k = nn.Conv2d(in_channels, dim, kernel_size, stride=stride, padding=pad)
        self.v = nn.Conv2d(in_channels, dim, kernel_size, stride=stride, padding=pad)

    def grid(self, h: int, w: int) -> Tuple[int, int]:
        if h % self.stride or w % self.stride:
            raise ValueError(f"spatial size {h}x{w} is not divisible by token stride {self.stride}")
        return h // self.stride, w // self.stride

    def forward(self, f: torch.Tensor):
        self.grid(*f.shape[-2:])

        def tokens(conv):
            # B x d x h x w -> B x T x d, row-major token order
            return conv(f).flatten(2).transpose(1, 2)

        return tokens(self.q), tokens(self.k), tokens(self.v)


class AttentionGate(nn.Module):
    """Maps a feature map to gating weights in (0, 1) with the same shape."""

    def __init__(self, in_channels: int = 1, dim: int = 64, kernel_size: int = 7, stride: int = 8):
        super().__init__()
        self.qkv = QKVProjection(in_channels, dim, kernel_size, stride)
        self.proj = nn.Linear(dim, 1)

    def weights_to_map(self, att_out: torch.Tensor, grid: Tuple[int, int], target_shape) -> torch.Tensor:
        """Project tokens to one scalar each, squash, and upsample to ``target_shape`` (F, H, W)."""
        ch, h, w = target_shape
        gh, gw = grid
        if h % gh or w % gw:
            raise ValueError(f"token grid {gh}x{gw} does not tile {h}x{w}")
        a = torch.sigmoid(self.proj(att_out))  # B x T x 1
        a = a.transpose(1, 2).reshape(att_out.shape[0], 1, gh, gw)
        a = a.repeat_interleave(h // gh, dim=2).repeat_interleave(w // gw, dim=3)
        return a.expand(-1, ch, -1, -1)

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        grid = self.qkv.grid(*f.shape[-2:])
        q, k, v = self.qkv(f)
        return self.weights_to_map(self_attention(q, k, v), grid, f.shape[1:])
