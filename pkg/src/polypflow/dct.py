"""Full-frame orthonormal 2-D DCT-II and the learnable frequency feature."""
from functools import lru_cache
import math

import torch
import torch.nn as nn
import torch.nn.functional as F


@lru_cache(maxsize=32)
def _dct_matrix_cached(n: int, dtype: torch.dtype) -> torch.Tensor:
    k = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(n, dtype=torch.float64)[None, :]
    mat = torch.cos(math.pi * (2 * i + 1) * k / (2 * n))
    mat[0] *= math.sqrt(1.0 / n)
    mat[1:] *= math.sqrt(2.0 / n)
    return mat.to(dtype)


def dct_matrix(n: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """Orthonormal DCT-II matrix ``C`` with ``C @ C.T == I``; row k is basis k."""
    return _dct_matrix_cached(int(n), dtype).to(device)


def dct2(x: torch.Tensor) -> torch.Tensor:
    """Orthonormal DCT-II over the last two axes (any leading shape)."""
    h, w = x.shape[-2:]
    ch = dct_matrix(h, x.dtype, x.device)
    cw = dct_matrix(w, x.dtype, x.device)
    return ch @ x @ cw.T


def idct2(c: torch.Tensor) -> torch.Tensor:
    h, w = c.shape[-2:]
    ch = dct_matrix(h, c.dtype, c.device)
    cw = dct_matrix(w, c.dtype, c.device)
    return ch.T @ c @ cw


class DCTFeature(nn.Module):
    """Per-channel DCT of the image followed by a learnable 1x1 projection.

    The coefficients are used as-is (coefficient domain), so the projection
    only has to reconcile channel counts with the U-Net branch.
    """

    def __init__(self, in_channels: int = 3, out_channels: int = 1):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, 1, 1))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        # raw coefficients are large near DC (up to sqrt(H*W)); start the term small
        nn.init.normal_(self.weight, std=1e-2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.conv2d(dct2(x), self.weight, self.bias)
