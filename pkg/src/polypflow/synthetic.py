"""Synthetic polyp-like image/mask pairs for smoke tests and the overfit probe."""
import os

import numpy as np
from PIL import Image


def synthetic_pair(size: int, rng: np.random.Generator):
    """A reddish textured background with one brighter elliptical lesion.

    Returns ``(image HxWx3 uint8, mask HxW uint8 in {0,255})``.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = rng.uniform(0.3, 0.7, size=2) * size
    ry, rx = rng.uniform(0.12, 0.3, size=2) * size
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    inside = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0

    base = np.array([0.55, 0.25, 0.2]) + rng.uniform(-0.05, 0.05, size=3)
    lesion = np.array([0.85, 0.55, 0.45]) + rng.uniform(-0.05, 0.05, size=3)
    img = np.where(inside[..., None], lesion, base)
    img = img + 0.04 * rng.standard_normal((size, size, 3))
    img = np.clip(img, 0, 1)
    return (img * 255).round().astype(np.uint8), inside.astype(np.uint8) * 255


def write_synthetic_dataset(root, name: str, n: int, size: int = 64, seed: int = 0, ext: str = ".png") -> str:
    """Write ``n`` pairs to ``root/name/{images,masks}`` and return the dataset dir."""
    base = os.path.join(root, name)
    os.makedirs(os.path.join(base, "images"), exist_ok=True)
    os.makedirs(os.path.join(base, "masks"), exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        img, mask = synthetic_pair(size, rng)
        stem = f"{name.lower()}_{i:04d}"
        Image.fromarray(img).save(os.path.join(base, "images", stem + ext))
        Image.fromarray(mask).save(os.path.join(base, "masks", stem + ".png"))
    return base
