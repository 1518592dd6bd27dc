"""Static figures: per-step trajectory strips and method comparison panels."""
import os
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from .ode import Trajectory, state_to_uint8

GAP = 4
CAPTION = 14
MIN_PANEL = 96


@dataclass
class Figure:
    path: str
    n_panels: int
    panel_size: Tuple[int, int]


def _panel_size(h: int, w: int) -> Tuple[int, int]:
    scale = max(1, -(-MIN_PANEL // max(h, w)))
    return h * scale, w * scale


def grid_width(n_panels: int, panel_w: int) -> int:
    return n_panels * (panel_w + GAP) + GAP


def emit_step_grid(traj: Trajectory, out, index: int = 0) -> Figure:
    """One horizontal strip, a grayscale ``sigmoid(z)`` panel per state, captioned with step and t."""
    if len(traj.states) < 2:
        raise ValueError("n_steps >= 1 required: trajectory has no integration steps")
    h, w = traj.states[0].shape[-2:]
    ph, pw = _panel_size(h, w)
    n = len(traj.states)
    canvas = Image.new("L", (grid_width(n, pw), ph + CAPTION + 2 * GAP), color=255)
    draw = ImageDraw.Draw(canvas)
    for k, (z, t) in enumerate(zip(traj.states, traj.times)):
        panel = Image.fromarray(state_to_uint8(z[index])).resize((pw, ph), Image.NEAREST)
        x0 = GAP + k * (pw + GAP)
        canvas.paste(panel, (x0, GAP))
        draw.text((x0 + 2, GAP + ph + 1), f"n={k} t={t:.2f}", fill=0)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    canvas.save(out)
    return Figure(str(out), n, (ph, pw))


def overlay(image: np.ndarray, pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Dimmed image with true positives green, false positives red, misses blue."""
    out = (image.astype(np.float64) * 0.5).astype(np.uint8)
    out[pred & gt] = (0, 220, 0)
    out[pred & ~gt] = (230, 0, 0)
    out[~pred & gt] = (0, 80, 255)
    return out


def _load_mask(path) -> np.ndarray:
    with Image.open(path) as m:
        return np.asarray(m.convert("L")) > 127


def emit_comparison(rows: Sequence[Tuple[str, str]], gt, image, out) -> Figure:
    """One row per method: ``input | GT | overlay``; with no methods a single ``input | GT`` row."""
    g = _load_mask(gt)
    h, w = g.shape
    masks = []
    for name, path in rows:
        m = _load_mask(path)
        if m.shape != g.shape:
            raise ValueError(f"mask for {name!r} is {m.shape[1]}x{m.shape[0]}, ground truth is {w}x{h}")
        masks.append((name, m))
    with Image.open(image) as im:
        img = np.asarray(im.convert("RGB").resize((w, h), Image.BILINEAR))
    gt_rgb = np.repeat((g * 255).astype(np.uint8)[..., None], 3, axis=2)

    n_rows = max(1, len(masks))
    n_cols = 3 if masks else 2
    canvas = Image.new("RGB", (grid_width(n_cols, w), n_rows * (h + CAPTION + GAP) + GAP), "white")
    draw = ImageDraw.Draw(canvas)
    for r in range(n_rows):
        y0 = GAP + r * (h + CAPTION + GAP)
        cells = [("input", img), ("GT", gt_rgb)]
        if masks:
            name, m = masks[r]
            cells.append((name, overlay(img, m, g)))
        for c, (label, arr) in enumerate(cells):
            x0 = GAP + c * (w + GAP)
            draw.text((x0 + 2, y0), label, fill="black")
            canvas.paste(Image.fromarray(arr), (x0, y0 + CAPTION))
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    canvas.save(out)
    return Figure(str(out), n_rows * n_cols, (h, w))
