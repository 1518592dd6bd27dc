"""Segmentation quality measures: Dice, IoU, MAE, weighted F-measure, S-measure, max E-measure.

All functions take 2-D numpy arrays. ``p`` is a soft prediction in [0, 1]
(binary where stated); ``g`` is a ground-truth mask, treated as ``g > 0.5``.
"""
import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy import ndimage
from PIL import Image

EPS = np.finfo(np.float64).eps
BINARY_THRESHOLD = 0.5
METRIC_NAMES = ("dice", "iou", "fbw", "sm", "em", "mae")


def _check_pair(p, g):
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} does not match ground truth {g.shape}")
    return p, g


def binarize(p, threshold: float = BINARY_THRESHOLD) -> np.ndarray:
    """Foreground iff strictly above the threshold (ties go to background)."""
    return np.asarray(p) > threshold


def dice(p, g) -> float:
    p, g = _check_pair(p, g)
    p, g = p > 0.5, g > 0.5
    denom = p.sum() + g.sum()
    return 1.0 if denom == 0 else 2.0 * np.logical_and(p, g).sum() / denom


def iou(p, g) -> float:
    p, g = _check_pair(p, g)
    p, g = p > 0.5, g > 0.5
    union = np.logical_or(p, g).sum()
    return 1.0 if union == 0 else np.logical_and(p, g).sum() / union


def mae(p, g) -> float:
    p, g = _check_pair(p, g)
    return float(np.abs(p - (g > 0.5)).mean())


# --- weighted F-measure --------------------------------------------------

def gaussian_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = (size - 1) / 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    k[k < EPS * k.max()] = 0
    return k / k.sum()


def _offsets(d2: int):
    """Integer offsets (di, dj) with di^2 + dj^2 == d2, in row-major order of the target."""
    out = []
    r = math.isqrt(d2)
    for di in range(-r, r + 1):
        rem = d2 - di * di
        s = math.isqrt(rem)
        if s * s == rem:
            out.extend([(di, -s), (di, s)] if s else [(di, 0)])
    return out


def nearest_foreground(g: np.ndarray):
    """Distance to, and flat index of, the nearest foreground pixel.

    Among equidistant candidates the smallest row-major index wins, so the
    result does not depend on the distance-transform implementation.
    """
    g = np.asarray(g, dtype=bool)
    h, w = g.shape
    dist = ndimage.distance_transform_edt(~g)
    d2 = np.rint(dist * dist).astype(np.int64)
    idx = np.arange(h * w).reshape(h, w)
    rows, cols = np.nonzero(~g)
    keys = d2[rows, cols]
    for value in np.unique(keys):
        sel = keys == value
        r, c = rows[sel], cols[sel]
        found = np.full(r.shape, -1, dtype=np.int64)
        for di, dj in _offsets(int(value)):
            todo = found < 0
            if not todo.any():
                break
            tr, tc = r + di, c + dj
            ok = todo & (tr >= 0) & (tr < h) & (tc >= 0) & (tc < w)
            ok[ok] = g[tr[ok], tc[ok]]
            found[ok] = tr[ok] * w + tc[ok]
        idx[r, c] = found
    return dist, idx


def weighted_fmeasure(p, g, beta2: float = 1.0) -> float:
    p, g = _check_pair(p, g)
    gt = g > 0.5
    if not gt.any():
        return 1.0 if not binarize(p).any() else 0.0
    err = np.abs(p - gt)
    dist, nearest = nearest_foreground(gt)
    et = err.ravel()[nearest]
    ea = ndimage.correlate(et, gaussian_kernel(7, 5.0), mode="constant", cval=0.0)
    min_e_ea = np.where(gt & (ea < err), ea, err)
    b = np.where(gt, 1.0, 2.0 - np.exp(np.log(0.5) / 5.0 * dist))
    ew = min_e_ea * b
    tpw = gt.sum() - ew[gt].sum()
    fpw = ew[~gt].sum()
    recall = 1 - ew[gt].mean()
    precision = tpw / (EPS + tpw + fpw)
    return float((1 + beta2) * recall * precision / (EPS + recall + beta2 * precision))


# --- S-measure -----------------------------------------------------------

def _s_object(values: np.ndarray) -> float:
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2 * x / (x * x + 1 + sigma + EPS)


def _object_score(p, gt) -> float:
    u = gt.mean()
    fg = _s_object((p * gt)[gt])
    bg = _s_object(((1 - p) * ~gt)[~gt])
    return u * fg + (1 - u) * bg


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def centroid(gt: np.ndarray):
    """1-based (x, y) split point: rounded centre of mass, or the image centre if empty."""
    h, w = gt.shape
    total = gt.sum()
    if total == 0:
        return _round_half_up(w / 2), _round_half_up(h / 2)
    ys, xs = np.nonzero(gt)
    return _round_half_up(xs.mean() + 1), _round_half_up(ys.mean() + 1)


def _ssim(p, g) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x, y = p.mean(), g.mean()
    sx = ((p - x) ** 2).sum() / (n - 1 + EPS)
    sy = ((g - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((p - x) * (g - y)).sum() / (n - 1 + EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def _region_score(p, gt) -> float:
    h, w = gt.shape
    cx, cy = centroid(gt)
    g = gt.astype(np.float64)
    area = h * w
    w1 = cx * cy / area
    w2 = (w - cx) * cy / area
    w3 = cx * (h - cy) / area
    w4 = 1 - w1 - w2 - w3
    return (w1 * _ssim(p[:cy, :cx], g[:cy, :cx]) + w2 * _ssim(p[:cy, cx:], g[:cy, cx:])
            + w3 * _ssim(p[cy:, :cx], g[cy:, :cx]) + w4 * _ssim(p[cy:, cx:], g[cy:, cx:]))


def s_measure(p, g, alpha: float = 0.5) -> float:
    p, g = _check_pair(p, g)
    gt = g > 0.5
    y = gt.mean()
    if y == 0:
        return float(1 - p.mean())
    if y == 1:
        return float(p.mean())
    q = alpha * _object_score(p, gt) + (1 - alpha) * _region_score(p, gt)
    return float(max(q, 0.0))


# --- E-measure -----------------------------------------------------------

E_THRESHOLDS = np.linspace(0.0, 1.0, 256)


def e_measure_curve(p, g, thresholds=E_THRESHOLDS) -> np.ndarray:
    """Enhanced-alignment score of ``p >= th`` for every threshold."""
    p, g = _check_pair(p, g)
    gt = g > 0.5
    n = gt.size
    n_fg = int(gt.sum())
    thresholds = np.asarray(thresholds, dtype=np.float64)
    sorted_all = np.sort(p.ravel())
    sorted_fg = np.sort(p[gt])
    n1 = n - np.searchsorted(sorted_all, thresholds, side="left")
    if n_fg == 0:
        return (n - n1) / n
    if n_fg == n:
        return n1 / n
    c11 = n_fg - np.searchsorted(sorted_fg, thresholds, side="left")
    counts = {(1, 1): c11, (1, 0): n1 - c11, (0, 1): n_fg - c11, (0, 0): n - n1 - n_fg + c11}
    mu_f = n1 / n
    mu_g = n_fg / n
    score = np.zeros_like(thresholds)
    for (b, gv), c in counts.items():
        af = b - mu_f
        ag = gv - mu_g
        align = 2 * ag * af / (ag * ag + af * af + EPS)
        score += c * (align + 1) ** 2 / 4
    return score / n


def e_measure_max(p, g) -> float:
    return float(e_measure_curve(p, g).max())


# --- per-image and per-dataset evaluation --------------------------------

def evaluate_pair(p, g) -> Dict[str, float]:
    p, g = _check_pair(p, g)
    return {
        "dice": float(dice(binarize(p), g)),
        "iou": float(iou(binarize(p), g)),
        "fbw": weighted_fmeasure(p, g),
        "sm": s_measure(p, g),
        "em": e_measure_max(p, g),
        "mae": mae(p, g),
    }


@dataclass
class MetricsReport:
    dataset: str
    rows: List[Dict] = field(default_factory=list)

    def add(self, basename: str, values: Dict[str, float]):
        self.rows.append({"basename": basename, **{k: float(values[k]) for k in METRIC_NAMES}})

    @property
    def means(self) -> Dict[str, float]:
        if not self.rows:
            return {k: float("nan") for k in METRIC_NAMES}
        return {k: float(np.mean([r[k] for r in self.rows])) for k in METRIC_NAMES}

    @property
    def summary(self) -> Dict[str, float]:
        """Means under the table names: mDice, mIoU, f_beta_w, s_alpha, e_phi_max, mae."""
        m = self.means
        return {"mDice": m["dice"], "mIoU": m["iou"], "f_beta_w": m["fbw"],
                "s_alpha": m["sm"], "e_phi_max": m["em"], "mae": m["mae"]}

    def csv_rows(self):
        for r in self.rows:
            yield [self.dataset, r["basename"]] + [r[k] for k in METRIC_NAMES]
        m = self.means
        yield [self.dataset, "MEAN"] + [m[k] for k in METRIC_NAMES]

    def to_dict(self):
        return {"dataset": self.dataset, "rows": self.rows, "mean": self.means}


CSV_HEADER = ["dataset", "basename"] + list(METRIC_NAMES)


def write_csv(reports, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for report in reports:
            writer.writerows(report.csv_rows())


def write_json(reports, path):
    with open(path, "w") as f:
        json.dump([r.to_dict() for r in reports], f, indent=2)


def _index_by_stem(directory) -> Dict[str, str]:
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"directory not found: {directory}")
    out = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() in (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"):
            out[stem] = os.path.join(directory, name)
    return out


def load_gray(path, size=None) -> np.ndarray:
    img = Image.open(path).convert("L")
    if size is not None and img.size != size:
        img = img.resize(size, Image.BILINEAR)
    return np.asarray(img, dtype=np.float64) / 255.0


def evaluate_dataset(preds_dir, gts_dir, dataset: str = "dataset") -> MetricsReport:
    """Per-image metrics for predictions matched to ground truths by file stem.

    Predictions whose size differs from the ground truth are bilinearly
    resized to it first.
    """
    preds = _index_by_stem(preds_dir)
    gts = _index_by_stem(gts_dir)
    orphans = sorted(set(preds) ^ set(gts))
    if orphans:
        raise ValueError(f"unmatched prediction/ground-truth files: {', '.join(orphans)}")
    report = MetricsReport(dataset)
    for stem in sorted(gts):
        g = load_gray(gts[stem]) > 0.5
        p = load_gray(preds[stem], size=(g.shape[1], g.shape[0]))
        report.add(stem, evaluate_pair(p, g))
    return report
