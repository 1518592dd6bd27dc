"""Analytic-vs-central-difference gradient verification on tiny float64 configurations."""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .attention import AttentionGate
from .dct import DCTFeature
from .field import PolypFlow, VectorField
from .losses import fm_regression_loss, segmentation_loss
from .unet import UNet

TINY_WIDTHS = (4, 8, 16, 32)


@dataclass
class GroupResult:
    name: str
    rel_error: float
    analytic_max_abs: float
    n_checked: int
    n_skipped: int = 0
    min_eps: float = 0.0
    frozen: bool = False


@dataclass
class GradCheckReport:
    selector: str
    tolerance: float
    groups: List[GroupResult] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((g.rel_error for g in self.groups if not g.frozen), default=0.0)

    @property
    def passed(self) -> bool:
        live = [g for g in self.groups if not g.frozen]
        return self.max_rel_error < self.tolerance and all(g.n_checked > 0 for g in live)

    def lines(self) -> List[str]:
        out = []
        for g in self.groups:
            if g.frozen:
                tag = "frozen"
            else:
                tag = "ok" if g.rel_error < self.tolerance and g.n_checked else "FAIL"
            out.append(f"{self.selector}:{g.name} rel_err={g.rel_error:.3e} max|grad|={g.analytic_max_abs:.3e} "
                       f"checked={g.n_checked} skipped={g.n_skipped} min_eps={g.min_eps:.0e} [{tag}]")
        return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)``."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


class KinkRecorder:
    """Records ReLU sign patterns and max-pool argmaxes of every forward pass.

    A central difference whose +eps or -eps evaluation switches any of these
    patterns straddles a non-differentiable point and is not a valid oracle.
    """

    def __init__(self, module: torch.nn.Module):
        self.patterns: List[torch.Tensor] = []
        self.handles = []
        for m in module.modules():
            if isinstance(m, torch.nn.ReLU):
                self.handles.append(m.register_forward_hook(self._relu))
            elif isinstance(m, torch.nn.MaxPool2d):
                self.handles.append(m.register_forward_hook(self._pool))

    def _relu(self, m, inputs, output):
        self.patterns.append(inputs[0].detach() > 0)

    def _pool(self, m, inputs, output):
        _, idx = F.max_pool2d(inputs[0].detach(), m.kernel_size, m.stride, m.padding, return_indices=True)
        self.patterns.append(idx)

    def take(self) -> List[torch.Tensor]:
        out, self.patterns = self.patterns, []
        return out

    def remove(self):
        for h in self.handles:
            h.remove()


def _same(a, b) -> bool:
    return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))


def check_gradients(loss_fn: Callable[[], torch.Tensor], tensors: Dict[str, torch.Tensor],
                    selector: str = "custom", tolerance: float = 1e-3, eps: float = 1e-6,
                    max_entries: int = 8, seed: int = 0, module: Optional[torch.nn.Module] = None,
                    max_attempts: int = 40, min_eps: float = 1e-7, floor_ratio: float = 1e-5) -> GradCheckReport:
    """Compare autograd gradients of ``loss_fn()`` with central differences.

    ``tensors`` maps group names to leaf tensors; tensors with
    ``requires_grad=False`` are reported as frozen (analytic gradient 0).
    Up to ``max_entries`` random entries per group are checked.

    If ``module`` is given, a perturbation that flips any ReLU sign or
    max-pool argmax straddles a kink; its step is divided by 10 (down to
    ``min_eps``) until it does not, and the entry is skipped otherwise.

    Relative errors use a floor of ``floor_ratio`` times the largest group
    gradient norm, so structurally zero gradients (a conv bias feeding a
    train-mode batch norm, a softmax key bias) do not compare round-off
    with round-off.
    """
    rng = np.random.default_rng(seed)
    recorder = KinkRecorder(module) if module is not None else None
    try:
        live = {k: t for k, t in tensors.items() if t.requires_grad}
        loss = loss_fn()
        base = recorder.take() if recorder else None
        grads = torch.autograd.grad(loss, list(live.values()), allow_unused=True)
        grad_of = {k: (torch.zeros_like(t) if g is None else g) for (k, t), g in zip(live.items(), grads)}

        def central(flat, i, h):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + h
                plus = loss_fn().item()
                sig_plus = recorder.take() if recorder else None
                flat[i] = orig - h
                minus = loss_fn().item()
                sig_minus = recorder.take() if recorder else None
                flat[i] = orig
            smooth = recorder is None or (_same(sig_plus, base) and _same(sig_minus, base))
            return (plus - minus) / (2 * h), smooth

        samples = {}
        for name, t in tensors.items():
            if not t.requires_grad:
                continue
            flat = t.data.view(-1)
            grad = grad_of[name].reshape(-1)
            analytic, numeric, skipped, used = [], [], 0, eps
            for i in rng.permutation(t.numel())[:max_attempts]:
                if len(analytic) >= max_entries:
                    break
                h = eps
                while True:
                    fd, smooth = central(flat, i, h)
                    if smooth or h / 10 < min_eps:
                        break
                    h /= 10
                if not smooth:
                    skipped += 1
                    continue
                used = min(used, h)
                analytic.append(grad[i].item())
                numeric.append(fd)
            samples[name] = (np.array(analytic), np.array(numeric), skipped, used)

        floor = max([1e-7] + [floor_ratio * np.linalg.norm(a) for a, *_ in samples.values()])
        report = GradCheckReport(selector, tolerance)
        for name, t in tensors.items():
            if name not in samples:
                report.groups.append(GroupResult(name, 0.0, 0.0, 0, frozen=True))
                continue
            a, n, skipped, used = samples[name]
            err = relative_error(a, n, floor) if len(a) else 0.0
            report.groups.append(GroupResult(name, err, float(np.abs(a).max()) if len(a) else 0.0,
                                             len(a), skipped, used))
        return report
    finally:
        if recorder:
            recorder.remove()


def _named(module: torch.nn.Module, prefix: str, frozen: Sequence[str] = ()) -> Dict[str, torch.Tensor]:
    out = {}
    for name, p in module.named_parameters():
        full = f"{prefix}.{name}" if prefix else name
        if any(full.startswith(f) for f in frozen):
            p.requires_grad_(False)
        out[full] = p
    return out


def _projection_loss(out: torch.Tensor, gen: torch.Generator) -> Callable[[torch.Tensor], torch.Tensor]:
    r = torch.randn(out.shape, generator=gen, dtype=torch.float64)
    return lambda y: (y * r).sum()


def grad_check(selector: str = "end_to_end", tolerance: float = None, eps: float = None,
               size: int = 16, n_steps: int = 2, max_entries: int = 6, seed: int = 0,
               frozen: Sequence[str] = (), kink_aware: bool = True) -> GradCheckReport:
    """Gradient check of one part of the model on a tiny float64 configuration.

    ``selector`` is one of ``losses``, ``backbone``, ``dct``, ``attention``,
    ``field`` or ``end_to_end`` (coarse backbone + ``n_steps`` unrolled Euler
    steps + segmentation loss). Parameter names starting with any prefix in
    ``frozen`` are frozen before the check. Default steps are eps=1e-3 for
    the backbone and 1e-6 elsewhere.
    """
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    dt = torch.float64

    def rand(*shape):
        return torch.rand(shape, generator=gen, dtype=dt)

    g = (rand(1, 1, size, size) > 0.5).to(dt)
    x = rand(1, 3, size, size)

    if selector == "losses":
        tol, step = tolerance or 1e-3, eps or 1e-6
        p = (0.05 + 0.9 * rand(1, 1, 8, 8)).requires_grad_()
        v = rand(1, 1, 8, 8).requires_grad_()
        g8, a, b = (rand(1, 1, 8, 8) > 0.5).to(dt), rand(1, 1, 8, 8), rand(1, 1, 8, 8)
        return check_gradients(lambda: segmentation_loss(p, g8) + fm_regression_loss(v, a, b),
                               {"p": p, "v_pred": v}, selector, tol, step, 64, seed)

    if selector == "backbone":
        tol, step = tolerance or 1e-3, eps or 1e-3
        net = UNet(3, TINY_WIDTHS).to(dt)
        tensors = {"input": x.requires_grad_(), **_named(net, "backbone", frozen)}
        proj = _projection_loss(net(x), gen)
        return check_gradients(lambda: proj(net(x)), tensors, selector, tol, step, max_entries, seed,
                               module=net if kink_aware else None)

    if selector == "dct":
        tol, step = tolerance or 1e-3, eps or 1e-6
        mod = DCTFeature(3, 2).to(dt)
        tensors = {"input": x.requires_grad_(), **_named(mod, "field.dctproj", frozen)}
        proj = _projection_loss(mod(x), gen)
        return check_gradients(lambda: proj(mod(x)), tensors, selector, tol, step, max_entries, seed)

    if selector == "attention":
        tol, step = tolerance or 1e-3, eps or 1e-6
        mod = AttentionGate(1, 4, 7, 8).to(dt)
        f = rand(1, 1, size, size).requires_grad_()
        tensors = {"input": f, **_named(mod, "field.attn", frozen)}
        proj = _projection_loss(mod(f), gen)
        return check_gradients(lambda: proj(mod(f)), tensors, selector, tol, step, max_entries, seed)

    if selector == "field":
        tol, step = tolerance or 1e-3, eps or 1e-6
        fld = VectorField(TINY_WIDTHS, mask_size=size, attn_dim=4, token_stride=8).to(dt)
        with torch.no_grad():
            fld.mask.normal_(generator=gen)
        z = torch.randn((1, 1, size, size), generator=gen, dtype=dt).requires_grad_()
        xi = x.clone().requires_grad_()
        tensors = {"z": z, "x": xi, **_named(fld, "field", frozen)}
        proj = _projection_loss(fld(0.3, z, xi), gen)
        return check_gradients(lambda: proj(fld(0.3, z, xi)), tensors, selector, tol, step, max_entries, seed,
                               module=fld if kink_aware else None)

    if selector == "end_to_end":
        tol, step = tolerance or 1e-2, eps or 1e-6
        model = PolypFlow(TINY_WIDTHS, image_size=size, attn_dim=4, token_stride=8, n_steps=n_steps).to(dt)
        with torch.no_grad():
            model.field.mask.normal_(std=0.1, generator=gen)
        tensors = _named(model, "", frozen)

        def loss():
            return segmentation_loss(torch.sigmoid(model(x).final), g)

        return check_gradients(loss, tensors, selector, tol, step, max_entries, seed,
                               module=model if kink_aware else None)

    raise ValueError(f"unknown selector {selector!r}")


SELECTORS = ("losses", "backbone", "dct", "attention", "field", "end_to_end")
