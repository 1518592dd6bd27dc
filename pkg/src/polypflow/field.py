"""The learned refinement velocity and the full segmentation model."""
import copy
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import AttentionGate
from .dct import DCTFeature
from .ode import Trajectory, euler_integrate
from .unet import DEFAULT_WIDTHS, UNet

# z (1) + image (3) + learnable mask (1) + constant time plane (1)
TRUNK_IN_CHANNELS = 6


class VectorField(nn.Module):
    """``v(t, z, x) = A * (UNet(z ++ x ++ m ++ t) + proj(DCT(x)))``.

    ``A`` is the attention gate computed from the trunk output. Either factor
    can be switched off with ``use_attention`` / ``use_dct``.
    """

    def __init__(
        self,
        widths: Sequence[int] = DEFAULT_WIDTHS,
        mask_size: int = 352,
        attn_dim: int = 64,
        attn_kernel: int = 7,
        token_stride: int = 8,
        use_attention: bool = True,
        use_dct: bool = True,
    ):
        super().__init__()
        self.trunk = UNet(TRUNK_IN_CHANNELS, widths, out_channels=1)
        self.mask = nn.Parameter(torch.zeros(1, mask_size, mask_size))
        self.attn = AttentionGate(1, attn_dim, attn_kernel, token_stride)
        self.dctproj = DCTFeature(3, 1)
        self.use_attention = use_attention
        self.use_dct = use_dct

    def check_inputs(self, z: torch.Tensor, x: torch.Tensor) -> None:
        if z.dim() != 4 or z.shape[1] != 1:
            raise ValueError(f"state must be B x 1 x H x W, got {tuple(z.shape)}")
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"image must be B x 3 x H x W, got {tuple(x.shape)}")
        if z.shape[0] != x.shape[0] or z.shape[-2:] != x.shape[-2:]:
            raise ValueError(f"state {tuple(z.shape)} and image {tuple(x.shape)} disagree")
        h, w = z.shape[-2:]
        for s in (self.trunk.stride, self.attn.qkv.stride):
            if h % s or w % s:
                raise ValueError(f"spatial size {h}x{w} is not divisible by {s}")

    def mask_at(self, h: int, w: int) -> torch.Tensor:
        m = self.mask
        if m.shape[-2:] != (h, w):
            m = F.interpolate(m[None], size=(h, w), mode="bilinear", align_corners=False)[0]
        return m

    def trunk_input(self, t, z: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        b, _, h, w = z.shape
        t = torch.as_tensor(t, dtype=z.dtype, device=z.device)
        t_plane = t.reshape(-1, 1, 1, 1).expand(b, 1, h, w)
        m = self.mask_at(h, w).expand(b, 1, h, w)
        return torch.cat([z, x, m, t_plane], dim=1)

    def forward(self, t, z: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        self.check_inputs(z, x)
        u = self.trunk(self.trunk_input(t, z, x))
        out = u + self.dctproj(x) if self.use_dct else u
        if self.use_attention:
            out = self.attn(u) * out
        return out


def toggle_components(field: VectorField, use_attention: bool, use_dct: bool) -> VectorField:
    """Return a view of ``field`` sharing all parameters, with components switched."""
    view = copy.copy(field)
    view.use_attention = use_attention
    view.use_dct = use_dct
    return view


class PolypFlow(nn.Module):
    """Coarse U-Net segmenter followed by Euler refinement along the learned field."""

    def __init__(
        self,
        widths: Sequence[int] = DEFAULT_WIDTHS,
        image_size: int = 352,
        attn_dim: int = 64,
        attn_kernel: int = 7,
        token_stride: int = 8,
        use_attention: bool = True,
        use_dct: bool = True,
        n_steps: int = 10,
        init_noise_std: float = 0.0,
    ):
        super().__init__()
        self.backbone = UNet(3, widths, out_channels=1)
        self.field = VectorField(widths, image_size, attn_dim, attn_kernel, token_stride, use_attention, use_dct)
        self.n_steps = n_steps
        self.init_noise_std = init_noise_std

    def initial_state(self, x: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        z0 = self.backbone(x)
        if self.init_noise_std > 0:
            noise = torch.randn(z0.shape, generator=generator, dtype=z0.dtype, device=z0.device)
            z0 = z0 + self.init_noise_std * noise
        return z0

    def refine(self, x: torch.Tensor, z0: torch.Tensor, n_steps: Optional[int] = None,
               field: Optional[VectorField] = None) -> Trajectory:
        field = self.field if field is None else field
        n = self.n_steps if n_steps is None else n_steps
        return euler_integrate(lambda t, z: field(t, z, x), z0, n)

    def forward(self, x: torch.Tensor, n_steps: Optional[int] = None) -> Trajectory:
        return self.refine(x, self.initial_state(x), n_steps)

    @torch.no_grad()
    def predict(self, x: torch.Tensor, n_steps: Optional[int] = None) -> torch.Tensor:
        """Probability map ``sigmoid(z_N)``."""
        return torch.sigmoid(self(x, n_steps).final)
