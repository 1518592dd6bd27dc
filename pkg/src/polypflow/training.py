"""Optimization loop, inference and the ablation harness."""
import csv
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image
from torch.utils.data import DataLoader

from . import metrics
from .checkpoint import Checkpoint, build_model, load_checkpoint, restore_model, save_checkpoint, snapshot
from .config import TrainConfig
from .data import PolypDataset, SampleRecord
from .field import PolypFlow, toggle_components
from .losses import fm_regression_loss, logit_target, segmentation_loss
from .ode import export_trajectory


LOG_HEADER = ["step", "epoch", "loss_seg", "loss_fm", "probe_mdice"]


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, last_checkpoint: Optional[str]):
        super().__init__(f"non-finite loss at step {step}; last good checkpoint: {last_checkpoint}")
        self.step = step
        self.last_checkpoint = last_checkpoint


def seed_everything(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)
    return torch.Generator().manual_seed(seed)


def compute_losses(model: PolypFlow, x: torch.Tensor, g: torch.Tensor, cfg: TrainConfig,
                   generator: Optional[torch.Generator] = None) -> Dict[str, torch.Tensor]:
    """Segmentation loss on the integrated output plus the weighted flow-matching term.

    With ``detach_trajectory`` the solver is not unrolled: the segmentation
    loss supervises the coarse prediction and the field learns only from
    the regression term.
    """
    lc = cfg.loss
    z0 = model.initial_state(x, generator)
    if cfg.detach_trajectory:
        final = z0
    else:
        final = model.refine(x, z0).final
    loss_seg = segmentation_loss(torch.sigmoid(final), g, lc.weight_window, lc.weight_gain)

    loss_fm = torch.zeros((), dtype=x.dtype)
    if lc.lambda_fm > 0:
        target = logit_target(g, lc.logit_eps)
        start = z0.detach()
        t = torch.rand((), generator=generator, dtype=x.dtype)
        xt = (1 - t) * start + t * target
        loss_fm = fm_regression_loss(model.field(t, xt, x), start, target)
    return {"loss": loss_seg + lc.lambda_fm * loss_fm, "loss_seg": loss_seg, "loss_fm": loss_fm}


def make_optimizer(model: PolypFlow, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


@torch.no_grad()
def predict_probs(model: PolypFlow, images: torch.Tensor, n_steps: Optional[int] = None,
                  field=None, batch_size: int = 8) -> torch.Tensor:
    model.eval()
    out = []
    for i in range(0, len(images), batch_size):
        x = images[i:i + batch_size]
        traj = model.refine(x, model.initial_state(x), n_steps, field=field)
        out.append(torch.sigmoid(traj.final))
    return torch.cat(out)


def load_arrays(records: Sequence[SampleRecord], size: int):
    ds = PolypDataset(records, size)
    pairs = [ds[i] for i in range(len(ds))]
    return torch.stack([p[0] for p in pairs]), torch.stack([p[1] for p in pairs])


def evaluate_model(model: PolypFlow, records: Sequence[SampleRecord], size: int, dataset: str = "dataset",
                   n_steps: Optional[int] = None, field=None, quick: bool = False) -> metrics.MetricsReport:
    """Metrics at the preprocessed resolution. ``quick`` computes only Dice/IoU/MAE."""
    images, masks = load_arrays(records, size)
    probs = predict_probs(model, images, n_steps, field)
    report = metrics.MetricsReport(dataset)
    for r, p, g in zip(records, probs, masks):
        p = p[0].double().numpy()
        g = g[0].numpy() > 0.5
        if quick:
            values = {"dice": metrics.dice(metrics.binarize(p), g), "iou": metrics.iou(metrics.binarize(p), g),
                      "fbw": float("nan"), "sm": float("nan"), "em": float("nan"), "mae": metrics.mae(p, g)}
        else:
            values = metrics.evaluate_pair(p, g)
        report.add(r.basename, values)
    return report


def _fmt(v) -> str:
    return "" if v is None else f"{float(torch.as_tensor(v).detach()):.6g}"


def train(cfg: TrainConfig, records: Sequence[SampleRecord], out_dir,
          probe_records: Optional[Sequence[SampleRecord]] = None) -> List[str]:
    """Train from scratch; returns the checkpoint paths written (one per evaluated epoch).

    Writes ``train_log.csv`` and ``epoch_XXXX.ckpt`` into ``out_dir``.
    """
    if not records:
        raise ValueError("training split is empty")
    os.makedirs(out_dir, exist_ok=True)
    gen = seed_everything(cfg.seed)
    model = build_model(cfg)
    model.train()
    opt = make_optimizer(model, cfg)
    size = cfg.model.image_size
    dataset = PolypDataset(records, size, augment=cfg.augment, seed=cfg.seed, cache=len(records) <= 256)
    loader = DataLoader(dataset, batch_size=cfg.batch_size, shuffle=True,
                        generator=torch.Generator().manual_seed(cfg.seed))
    probe = list(probe_records if probe_records is not None else records[:cfg.probe_size])
    probe_arrays = load_arrays(probe, size) if probe else None

    paths: List[str] = []
    step = 0
    with open(os.path.join(out_dir, "train_log.csv"), "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(LOG_HEADER)
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            rows = []
            for x, g in loader:
                losses = compute_losses(model, x, g, cfg, gen)
                step += 1
                if not torch.isfinite(losses["loss"]):
                    writer.writerows(rows)
                    raise TrainingDiverged(step, paths[-1] if paths else None)
                opt.zero_grad(set_to_none=True)
                losses["loss"].backward()
                opt.step()
                rows.append([step, epoch, _fmt(losses["loss_seg"]), _fmt(losses["loss_fm"]), ""])
                if cfg.max_steps and step >= cfg.max_steps:
                    break
            stop = bool(cfg.max_steps and step >= cfg.max_steps)
            if stop or epoch == cfg.epochs or epoch % cfg.eval_every == 0:
                if probe_arrays is not None:
                    rows[-1][-1] = _fmt(probe_dice(model, *probe_arrays))
                path = os.path.join(out_dir, f"epoch_{epoch:04d}.ckpt")
                save_checkpoint(snapshot(model, cfg, opt, epoch=epoch, step=step), path)
                paths.append(path)
            writer.writerows(rows)
            log_file.flush()
            if stop:
                break
    return paths


@torch.no_grad()
def probe_dice(model: PolypFlow, images: torch.Tensor, masks: torch.Tensor) -> float:
    probs = predict_probs(model, images)
    model.train()
    scores = [metrics.dice(metrics.binarize(p[0].numpy()), g[0].numpy()) for p, g in zip(probs, masks)]
    return float(np.mean(scores))


# --- inference -----------------------------------------------------------

def _as_model(ckpt) -> Tuple[PolypFlow, TrainConfig]:
    if isinstance(ckpt, (str, os.PathLike)):
        ckpt = load_checkpoint(ckpt)
    if isinstance(ckpt, Checkpoint):
        return restore_model(ckpt), ckpt.config
    raise TypeError(f"expected a checkpoint or path, got {type(ckpt).__name__}")


def load_image(path, size: int) -> Tuple[torch.Tensor, Tuple[int, int]]:
    with Image.open(path) as img:
        img = img.convert("RGB")
        original = img.size
        if img.size != (size, size):
            img = img.resize((size, size), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
    return torch.from_numpy(arr.copy())[None], original


def _soft_at(final: torch.Tensor, original: Tuple[int, int]) -> np.ndarray:
    """Sigmoid of the final state, bilinearly resized to ``original`` (W, H)."""
    soft = torch.sigmoid(final)[0, 0].double().numpy()
    if soft.shape[::-1] != tuple(original):
        img = Image.fromarray(soft.astype(np.float32), mode="F").resize(original, Image.BILINEAR)
        soft = np.clip(np.asarray(img, dtype=np.float64), 0, 1)
    return soft


def _to_png(soft: np.ndarray) -> Image.Image:
    return Image.fromarray(np.round(soft * 255).astype(np.uint8))


def infer(image_path, ckpt, n_steps: Optional[int] = None, out_dir=None):
    """Segment one image. Returns ``(mask path or None, probability map, trajectory)``.

    The mask is ``sigmoid(z_N) > 0.5`` resized back to the input resolution;
    with ``out_dir`` the mask, the soft map and the trajectory are written.
    """
    model, cfg = _as_model(ckpt)
    x, original = load_image(image_path, cfg.model.image_size)
    with torch.no_grad():
        traj = model.refine(x, model.initial_state(x), n_steps)
    soft = _soft_at(traj.final, original)
    prob_img = _to_png(soft)
    mask = metrics.binarize(soft)
    mask_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        stem = os.path.splitext(os.path.basename(image_path))[0]
        mask_path = os.path.join(out_dir, f"{stem}_mask.png")
        Image.fromarray(mask.astype(np.uint8) * 255).save(mask_path)
        prob_img.save(os.path.join(out_dir, f"{stem}_prob.png"))
        export_trajectory(traj, os.path.join(out_dir, f"{stem}_trajectory"))
    return mask_path, soft, traj


def predict_directory(images_dir, ckpt, out_dir, n_steps: Optional[int] = None) -> List[str]:
    """Write soft probability maps ``<stem>.png`` for every image in ``images_dir``."""
    model, cfg = _as_model(ckpt)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in sorted(os.listdir(images_dir)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"):
            continue
        x, original = load_image(os.path.join(images_dir, name), cfg.model.image_size)
        with torch.no_grad():
            final = model.refine(x, model.initial_state(x), n_steps).final
        path = os.path.join(out_dir, stem + ".png")
        _to_png(_soft_at(final, original)).save(path)
        written.append(path)
    return written


# --- ablation ------------------------------------------------------------

COMPONENT_ROWS = (
    ("Backbone", False, False),
    ("SA + Backbone", True, False),
    ("DCT + Backbone", False, True),
    ("SA + DCT + Backbone", True, True),
)
STEP_GRID = (1, 5, 8, 10, 15)


@dataclass
class AblationReport:
    datasets: List[str]
    rows: List[Dict] = field(default_factory=list)

    @property
    def columns(self) -> List[str]:
        cols = ["setting", "n_steps"]
        for d in self.datasets:
            cols += [f"{d}/mDice", f"{d}/mIoU"]
        return cols

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=self.columns)
            writer.writeheader()
            writer.writerows(self.rows)

    def to_markdown(self) -> str:
        cols = self.columns
        lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        for r in self.rows:
            cells = [f"{r[c]:.3f}" if isinstance(r[c], float) else str(r[c]) for c in cols]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def _ablation_row(name, n_steps, model, eval_sets, size, field_view):
    row = {"setting": name, "n_steps": n_steps}
    for ds, recs in eval_sets.items():
        s = evaluate_model(model, recs, size, ds, n_steps=n_steps, field=field_view, quick=True).summary
        row[f"{ds}/mDice"] = s["mDice"]
        row[f"{ds}/mIoU"] = s["mIoU"]
    return row


def ablate(ckpt, eval_sets: Dict[str, Sequence[SampleRecord]], components=COMPONENT_ROWS,
           step_counts=STEP_GRID, train_records: Optional[Sequence[SampleRecord]] = None,
           out_dir=None) -> Tuple[AblationReport, AblationReport]:
    """Component grid and step-count grid.

    Without ``train_records`` each component row toggles the components of
    the checkpointed model at inference time. With ``train_records`` every
    component row is retrained from the checkpoint's config with its flags
    set (checkpoints under ``out_dir/<setting>``).
    """
    model, cfg = _as_model(ckpt)
    size = cfg.model.image_size
    names = list(eval_sets)
    comp = AblationReport(names)
    for name, use_sa, use_dct in components:
        if train_records is not None:
            sub_cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, use_attention=use_sa, use_dct=use_dct))
            sub_dir = os.path.join(out_dir or ".", name.replace(" ", "").replace("+", "_"))
            sub_model, _ = _as_model(train(sub_cfg, train_records, sub_dir)[-1])
            comp.rows.append(_ablation_row(name, cfg.model.n_steps, sub_model, eval_sets, size, None))
        else:
            view = toggle_components(model.field, use_sa, use_dct)
            comp.rows.append(_ablation_row(name, cfg.model.n_steps, model, eval_sets, size, view))
    steps = AblationReport(names)
    for n in step_counts:
        steps.rows.append(_ablation_row("SA + DCT + Backbone", int(n), model, eval_sets, size, None))
    return comp, steps
