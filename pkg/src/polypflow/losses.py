"""Boundary-weighted IoU + BCE segmentation loss and the flow-matching regression loss.

All segmentation losses take probability maps of shape B x 1 x H x W and
average per-image values over the batch.
"""
import torch
import torch.nn.functional as F

PROB_CLAMP = 1e-7


def boundary_weights(g: torch.Tensor, window: int = 31, gain: float = 5.0) -> torch.Tensor:
    """``1 + gain * |AvgPool_window(g) - g|`` with zero ("same") padding."""
    local = F.avg_pool2d(g, kernel_size=window, stride=1, padding=window // 2, count_include_pad=True)
    return 1 + gain * torch.abs(local - g)


def weighted_bce(p: torch.Tensor, g: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    p = p.clamp(PROB_CLAMP, 1 - PROB_CLAMP)
    bce = -(g * torch.log(p) + (1 - g) * torch.log(1 - p))
    per_image = (w * bce).sum(dim=(1, 2, 3)) / w.sum(dim=(1, 2, 3))
    return per_image.mean()


def weighted_iou(p: torch.Tensor, g: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
    inter = (w * p * g).sum(dim=(1, 2, 3))
    union = (w * (p + g - p * g)).sum(dim=(1, 2, 3))
    return (1 - (inter + 1) / (union + 1)).mean()


def segmentation_loss(p: torch.Tensor, g: torch.Tensor, window: int = 31, gain: float = 5.0) -> torch.Tensor:
    w = boundary_weights(g, window, gain)
    return weighted_iou(p, g, w) + weighted_bce(p, g, w)


def fm_regression_loss(v_pred: torch.Tensor, x0: torch.Tensor, x1: torch.Tensor) -> torch.Tensor:
    """Mean squared error against the straight-path velocity ``x1 - x0``."""
    if v_pred.shape != x0.shape or x0.shape != x1.shape:
        raise ValueError(f"shape mismatch: {tuple(v_pred.shape)}, {tuple(x0.shape)}, {tuple(x1.shape)}")
    return ((v_pred - (x1 - x0)) ** 2).mean()


def logit_target(g: torch.Tensor, eps: float = 0.05) -> torch.Tensor:
    """Map a {0,1} mask into the unbounded state space: ``logit(clamp(g, eps, 1 - eps))``."""
    return torch.logit(g.clamp(eps, 1 - eps))
