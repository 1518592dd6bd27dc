"""Four-level U-Net: encoder E1..E4, decoder D3..D1, 1x1 logit head."""
from typing import List, Sequence

import torch
import torch.nn as nn

DEFAULT_WIDTHS = (64, 128, 256, 512)


class ConvBNReLU(nn.Sequential):
    def __init__(self, in_ch, out_ch, kernel_size=3):
        super().__init__(
            nn.Conv2d(in_ch, out_ch, kernel_size, padding=kernel_size // 2),
            nn.BatchNorm2d(out_ch, momentum=0.1),
            nn.ReLU(inplace=False),
        )


class ConvBlock(nn.Sequential):
    """Two 3x3 conv+BN+ReLU layers."""

    def __init__(self, in_ch, out_ch):
        super().__init__(ConvBNReLU(in_ch, out_ch), ConvBNReLU(out_ch, out_ch))


class UpBlock(nn.Module):
    def __init__(self, in_ch, skip_ch, out_ch):
        super().__init__()
        self.up = nn.ConvTranspose2d(in_ch, skip_ch, kernel_size=2, stride=2)
        self.conv = ConvBlock(2 * skip_ch, out_ch)

    def forward(self, deeper, skip):
        up = self.up(deeper)
        if up.shape[-2:] != skip.shape[-2:] or up.shape[0] != skip.shape[0]:
            raise ValueError(
                f"cannot concatenate upsampled {tuple(up.shape)} with skip {tuple(skip.shape)}"
            )
        return self.conv(torch.cat([up, skip], dim=1))


class UNet(nn.Module):
    """Encoder-decoder with skip connections.

    Encoder level l is a single conv+BN+ReLU; levels 2..4 are preceded by a
    2x2 max-pool, so ``E_l`` has stride ``2**(l-1)``. Decoder level l
    upsamples ``D_{l+1}`` (``D_4 = E_4``) with a stride-2 transposed conv,
    concatenates ``E_l`` and applies a two-layer conv block.
    """

    levels = 4

    def __init__(self, in_channels: int = 3, widths: Sequence[int] = DEFAULT_WIDTHS, out_channels: int = 1):
        super().__init__()
        widths = tuple(int(c) for c in widths)
        if len(widths) != self.levels:
            raise ValueError(f"expected {self.levels} channel widths, got {widths}")
        if any(b <= a for a, b in zip(widths, widths[1:])):
            raise ValueError(f"channel widths must be strictly increasing, got {widths}")
        self.in_channels = in_channels
        self.widths = widths
        c1, c2, c3, c4 = widths
        self.enc1 = ConvBNReLU(in_channels, c1)
        self.enc2 = ConvBNReLU(c1, c2)
        self.enc3 = ConvBNReLU(c2, c3)
        self.enc4 = ConvBNReLU(c3, c4)
        self.pool = nn.MaxPool2d(2)
        self.dec3 = UpBlock(c4, c3, c3)
        self.dec2 = UpBlock(c3, c2, c2)
        self.dec1 = UpBlock(c2, c1, c1)
        self.head = nn.Conv2d(c1, out_channels, kernel_size=1)

    @property
    def stride(self) -> int:
        return 2 ** (self.levels - 1)

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4:
            raise ValueError(f"expected B x C x H x W input, got shape {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        h, w = x.shape[-2:]
        if h % self.stride or w % self.stride:
            raise ValueError(f"spatial size {h}x{w} is not divisible by {self.stride}")

    def encode(self, x: torch.Tensor) -> List[torch.Tensor]:
        self.check_input(x)
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        e4 = self.enc4(self.pool(e3))
        return [e1, e2, e3, e4]

    def decode(self, feats: Sequence[torch.Tensor]) -> List[torch.Tensor]:
        """Return ``[D3, D2, D1]``."""
        e1, e2, e3, e4 = feats
        d3 = self.dec3(e4, e3)
        d2 = self.dec2(d3, e2)
        d1 = self.dec1(d2, e1)
        return [d3, d2, d1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.decode(self.encode(x))[-1])
