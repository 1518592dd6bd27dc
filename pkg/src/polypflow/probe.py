"""The 8-image overfit sanity probe on synthetic data."""
import csv
import os
from dataclasses import dataclass
from typing import List

from .config import ModelConfig, TrainConfig
from .data import SampleRecord, load_dataset
from .synthetic import write_synthetic_dataset
from .training import train

PROBE_CONFIG = TrainConfig(
    epochs=200, batch_size=8, lr=3e-3, seed=0, eval_every=50,
    model=ModelConfig(widths=(4, 8, 16, 32), image_size=32, attn_dim=8),
)


@dataclass
class ProbeResult:
    losses: List[float]
    mdice: float
    checkpoints: List[str]
    records: List[SampleRecord]

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def read_log(path) -> List[dict]:
    with open(path) as f:
        return list(csv.DictReader(f))


def run_overfit_probe(out_dir, cfg: TrainConfig = PROBE_CONFIG, n_images: int = 8, data_seed: int = 1) -> ProbeResult:
    """Train on ``n_images`` synthetic pairs (one batch, so one step per epoch) and report
    the per-step total loss and the final mDice on the same images."""
    write_synthetic_dataset(os.path.join(out_dir, "data"), "KvasirSEG", n_images, size=64, seed=data_seed)
    records = load_dataset(os.path.join(out_dir, "data"), "KvasirSEG")
    paths = train(cfg, records, os.path.join(out_dir, "run"), probe_records=records)
    rows = read_log(os.path.join(out_dir, "run", "train_log.csv"))
    losses = [float(r["loss_seg"]) + cfg.loss.lambda_fm * float(r["loss_fm"]) for r in rows]
    mdice = float([r["probe_mdice"] for r in rows if r["probe_mdice"]][-1])
    return ProbeResult(losses, mdice, paths, records)
