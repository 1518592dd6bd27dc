"""Slow, definition-level reference implementations.

These are written from the mathematical definitions with explicit loops and
share no code with the package. Tests compare the package against them.
"""
import math

import numpy as np

EPS = np.finfo(np.float64).eps


# --- transforms -----------------------------------------------------------

def dct2_naive(x):
    """Orthonormal 2-D DCT-II by the O(N^4) double sum."""
    h, w = x.shape
    out = np.zeros((h, w))
    for u in range(h):
        au = math.sqrt((1 if u == 0 else 2) / h)
        for v in range(w):
            av = math.sqrt((1 if v == 0 else 2) / w)
            s = 0.0
            for i in range(h):
                for j in range(w):
                    s += x[i, j] * math.cos(math.pi * (2 * i + 1) * u / (2 * h)) \
                        * math.cos(math.pi * (2 * j + 1) * v / (2 * w))
            out[u, v] = au * av * s
    return out


def dct_basis(h, w, u, v):
    """The (u, v) orthonormal basis image."""
    au = math.sqrt((1 if u == 0 else 2) / h)
    av = math.sqrt((1 if v == 0 else 2) / w)
    img = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            img[i, j] = au * av * math.cos(math.pi * (2 * i + 1) * u / (2 * h)) \
                * math.cos(math.pi * (2 * j + 1) * v / (2 * w))
    return img


# --- convolution / attention ---------------------------------------------

def conv2d_loop(x, weight, bias, stride=1, pad=0):
    """Cross-correlation of one C x H x W map; zero padding."""
    c, h, w = x.shape
    o, _, kh, kw = weight.shape
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad))
    xp[:, pad:pad + h, pad:pad + w] = x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((o, oh, ow))
    for d in range(o):
        for r in range(oh):
            for s in range(ow):
                acc = bias[d]
                for ch in range(c):
                    for a in range(kh):
                        for b in range(kw):
                            acc += weight[d, ch, a, b] * xp[ch, r * stride + a, s * stride + b]
                out[d, r, s] = acc
    return out


def softmax_attention_loops(q, k, v):
    t, d = q.shape
    out = np.zeros((t, v.shape[1]))
    for i in range(t):
        scores = [sum(q[i, c] * k[j, c] for c in range(d)) / math.sqrt(d) for j in range(k.shape[0])]
        m = max(scores)
        e = [math.exp(s - m) for s in scores]
        z = sum(e)
        for j in range(k.shape[0]):
            out[i] += e[j] / z * v[j]
    return out


def tokens_row_major(maps):
    """d x gh x gw -> T x d with row-major token order."""
    d, gh, gw = maps.shape
    out = np.zeros((gh * gw, d))
    for r in range(gh):
        for s in range(gw):
            out[r * gw + s] = maps[:, r, s]
    return out


def gate_map(att_out, lin_w, lin_b, grid, h, w):
    """Linear d->1, sigmoid, nearest upsample onto h x w."""
    gh, gw = grid
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            tok = (i * gh // h) * gw + (j * gw // w)
            a = float(np.dot(att_out[tok], lin_w)) + lin_b
            out[i, j] = 1 / (1 + math.exp(-a))
    return out


# --- ODE ------------------------------------------------------------------

def euler_scalar(f, x0, n):
    x, dt = x0, 1.0 / n
    for k in range(n):
        x = x + f(k * dt, x) * dt
    return x


# --- losses ---------------------------------------------------------------

def boundary_weights_loop(g, window=31, gain=5.0):
    h, w = g.shape
    r = window // 2
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            s = 0.0
            for a in range(i - r, i + r + 1):
                for b in range(j - r, j + r + 1):
                    if 0 <= a < h and 0 <= b < w:
                        s += g[a, b]
            out[i, j] = 1 + gain * abs(s / (window * window) - g[i, j])
    return out


def weighted_bce_loop(p, g, w):
    num = den = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            q = min(max(p[i, j], 1e-7), 1 - 1e-7)
            num += w[i, j] * (-g[i, j] * math.log(q) - (1 - g[i, j]) * math.log(1 - q))
            den += w[i, j]
    return num / den


def weighted_iou_loop(p, g, w):
    inter = union = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            inter += w[i, j] * p[i, j] * g[i, j]
            union += w[i, j] * (p[i, j] + g[i, j] - p[i, j] * g[i, j])
    return 1 - (inter + 1) / (union + 1)


# --- metrics --------------------------------------------------------------

def _pixels(a):
    h, w = a.shape
    return [(i, j) for i in range(h) for j in range(w)]


def dice_loop(pb, gb):
    inter = sum(1 for i, j in _pixels(pb) if pb[i, j] and gb[i, j])
    total = sum(1 for i, j in _pixels(pb) if pb[i, j]) + sum(1 for i, j in _pixels(gb) if gb[i, j])
    return 1.0 if total == 0 else 2 * inter / total


def iou_loop(pb, gb):
    inter = sum(1 for i, j in _pixels(pb) if pb[i, j] and gb[i, j])
    union = sum(1 for i, j in _pixels(pb) if pb[i, j] or gb[i, j])
    return 1.0 if union == 0 else inter / union


def mae_loop(p, gb):
    return sum(abs(p[i, j] - float(gb[i, j])) for i, j in _pixels(p)) / p.size


def nearest_fg_brute(gb):
    """Per pixel: (distance, (row, col)) of the nearest foreground pixel;
    ties go to the smallest row-major index."""
    fg = [(i, j) for i, j in _pixels(gb) if gb[i, j]]
    h, w = gb.shape
    dist = np.zeros((h, w))
    near = {}
    for i, j in _pixels(gb):
        if gb[i, j]:
            near[i, j] = (i, j)
            continue
        best, arg = None, None
        for a, b in fg:  # fg is in row-major order, so strict < keeps the first
            d2 = (a - i) ** 2 + (b - j) ** 2
            if best is None or d2 < best:
                best, arg = d2, (a, b)
        dist[i, j] = math.sqrt(best)
        near[i, j] = arg
    return dist, near


def gaussian_7x7_sigma5():
    k = np.zeros((7, 7))
    for a in range(7):
        for b in range(7):
            k[a, b] = math.exp(-((a - 3) ** 2 + (b - 3) ** 2) / (2 * 25.0))
    k[k < EPS * k.max()] = 0
    return k / k.sum()


def weighted_fmeasure_loop(p, gb):
    h, w = gb.shape
    if not gb.any():
        return 1.0 if not (p > 0.5).any() else 0.0
    e = np.array([[abs(p[i, j] - float(gb[i, j])) for j in range(w)] for i in range(h)])
    dist, near = nearest_fg_brute(gb)
    et = np.array([[e[near[i, j]] for j in range(w)] for i in range(h)])
    k = gaussian_7x7_sigma5()
    ea = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            s = 0.0
            for a in range(7):
                for b in range(7):
                    r, c = i + a - 3, j + b - 3
                    if 0 <= r < h and 0 <= c < w:
                        s += k[a, b] * et[r, c]
            ea[i, j] = s
    ew = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            m = ea[i, j] if (gb[i, j] and ea[i, j] < e[i, j]) else e[i, j]
            b = 1.0 if gb[i, j] else 2 - math.exp(math.log(0.5) / 5 * dist[i, j])
            ew[i, j] = m * b
    n_fg = sum(1 for i, j in _pixels(gb) if gb[i, j])
    ew_fg = sum(ew[i, j] for i, j in _pixels(gb) if gb[i, j])
    ew_bg = sum(ew[i, j] for i, j in _pixels(gb) if not gb[i, j])
    tpw = n_fg - ew_fg
    recall = 1 - ew_fg / n_fg
    precision = tpw / (EPS + tpw + ew_bg)
    return 2 * recall * precision / (EPS + recall + precision)


def _mean(vals):
    return sum(vals) / len(vals)


def _std1(vals):
    if len(vals) < 2:
        return 0.0
    m = _mean(vals)
    return math.sqrt(sum((v - m) ** 2 for v in vals) / (len(vals) - 1))


def _obj(vals):
    x = _mean(vals)
    return 2 * x / (x * x + 1 + _std1(vals) + EPS)


def _ssim_loop(p, g):
    vals_p = [p[i, j] for i, j in _pixels(p)]
    vals_g = [g[i, j] for i, j in _pixels(g)]
    n = len(vals_p)
    if n == 0:
        return 0.0
    x, y = _mean(vals_p), _mean(vals_g)
    sx = sum((a - x) ** 2 for a in vals_p) / (n - 1 + EPS)
    sy = sum((b - y) ** 2 for b in vals_g) / (n - 1 + EPS)
    sxy = sum((a - x) * (b - y) for a, b in zip(vals_p, vals_g)) / (n - 1 + EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def s_measure_loop(p, gb, alpha=0.5):
    h, w = gb.shape
    fg = [(i, j) for i, j in _pixels(gb) if gb[i, j]]
    y = len(fg) / gb.size
    if y == 0:
        return 1 - _mean([p[i, j] for i, j in _pixels(p)])
    if y == 1:
        return _mean([p[i, j] for i, j in _pixels(p)])
    bg = [(i, j) for i, j in _pixels(gb) if not gb[i, j]]
    o_fg = _obj([p[i, j] for i, j in fg])
    o_bg = _obj([1 - p[i, j] for i, j in bg])
    s_obj = y * o_fg + (1 - y) * o_bg
    # 1-based centroid rounded half up
    cx = int(math.floor(_mean([j + 1 for _, j in fg]) + 0.5))
    cy = int(math.floor(_mean([i + 1 for i, _ in fg]) + 0.5))
    g = gb.astype(float)
    area = h * w
    w1 = cx * cy / area
    w2 = (w - cx) * cy / area
    w3 = cx * (h - cy) / area
    w4 = 1 - w1 - w2 - w3
    s_reg = (w1 * _ssim_loop(p[:cy, :cx], g[:cy, :cx]) + w2 * _ssim_loop(p[:cy, cx:], g[:cy, cx:])
             + w3 * _ssim_loop(p[cy:, :cx], g[cy:, :cx]) + w4 * _ssim_loop(p[cy:, cx:], g[cy:, cx:]))
    return max(alpha * s_obj + (1 - alpha) * s_reg, 0.0)


def e_measure_at(p, gb, th):
    pix = _pixels(p)
    n = len(pix)
    fm = {q: 1.0 if p[q] >= th else 0.0 for q in pix}
    gt = {q: 1.0 if gb[q] else 0.0 for q in pix}
    if sum(gt.values()) == 0:
        return sum(1 - fm[q] for q in pix) / n
    if sum(gt.values()) == n:
        return sum(fm[q] for q in pix) / n
    mf = sum(fm.values()) / n
    mg = sum(gt.values()) / n
    total = 0.0
    for q in pix:
        a, b = fm[q] - mf, gt[q] - mg
        align = 2 * a * b / (a * a + b * b + EPS)
        total += (align + 1) ** 2 / 4
    return total / n


def e_measure_max_loop(p, gb, thresholds):
    # thresholds giving the same foreground set give the same score
    seen = {}
    for th in thresholds:
        key = tuple(bool(v >= th) for v in p.ravel())
        if key not in seen:
            seen[key] = e_measure_at(p, gb, th)
    return max(seen.values())


def random_metric_case(rng, size=16):
    """A (soft prediction, binary mask) pair; every tenth draw has an empty or full mask."""
    kind = rng.integers(10)
    if kind == 0:
        g = np.zeros((size, size), bool)
    elif kind == 1:
        g = np.ones((size, size), bool)
    else:
        yy, xx = np.mgrid[0:size, 0:size]
        cy, cx = rng.uniform(3, size - 3, 2)
        ry, rx = rng.uniform(1.5, size / 3, 2)
        g = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        g ^= rng.random((size, size)) < 0.03
    style = rng.integers(3)
    if style == 0:
        p = np.clip(g * rng.uniform(0.2, 0.8) + rng.uniform(0, 0.6, (size, size)), 0, 1)
    elif style == 1:
        p = np.round(rng.random((size, size)) * 255) / 255
    else:
        p = (g ^ (rng.random((size, size)) < 0.1)).astype(float)
    return p, g
