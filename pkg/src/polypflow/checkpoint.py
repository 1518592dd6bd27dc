"""Single-file checkpoint archive.

A zip file holding:

* ``VERSION``     schema string
* ``arrays.npz``  named arrays: model tensors under their module paths
                  (``backbone.enc1.0.weight``, ``field.mask`` ...) and
                  optimizer moments under ``optim/<param name>/<key>``
* ``config.json`` the training configuration snapshot
* ``meta.json``   epoch / step counters and optimizer hyper-parameters
"""
import io
import json
import zipfile
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import torch

from .config import TrainConfig
from .field import PolypFlow

SCHEMA_VERSION = "polypflow-checkpoint/1"


class CheckpointSchemaError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    arrays: Dict[str, np.ndarray]
    optimizer: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: Dict = field(default_factory=dict)

    @property
    def epoch(self) -> int:
        return int(self.meta.get("epoch", 0))


def build_model(cfg: TrainConfig) -> PolypFlow:
    m = cfg.model
    return PolypFlow(
        widths=m.widths, image_size=m.image_size, attn_dim=m.attn_dim, attn_kernel=m.attn_kernel,
        token_stride=m.token_stride, use_attention=m.use_attention, use_dct=m.use_dct,
        n_steps=m.n_steps, init_noise_std=m.init_noise_std,
    )


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy().copy()


def snapshot(model: PolypFlow, cfg: TrainConfig, optimizer: Optional[torch.optim.Optimizer] = None,
             **meta) -> Checkpoint:
    arrays = {k: _to_numpy(v) for k, v in model.state_dict().items()}
    opt_arrays, opt_meta = {}, {}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                for key, value in optimizer.state.get(p, {}).items():
                    opt_arrays[f"optim/{names[id(p)]}/{key}"] = _to_numpy(torch.as_tensor(value))
        opt_meta = {"param_groups": [{k: v for k, v in g.items() if k != "params"}
                                     for g in optimizer.param_groups]}
    return Checkpoint(cfg, arrays, opt_arrays, {**meta, **opt_meta})


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    buf = io.BytesIO()
    np.savez(buf, **ckpt.arrays, **ckpt.optimizer)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("VERSION", SCHEMA_VERSION)
        zf.writestr("arrays.npz", buf.getvalue())
        zf.writestr("config.json", ckpt.config.to_json())
        zf.writestr("meta.json", json.dumps(ckpt.meta, indent=2, default=str))


def load_checkpoint(path) -> Checkpoint:
    try:
        zf = zipfile.ZipFile(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"checkpoint not found: {path}") from None
    except zipfile.BadZipFile as e:
        raise CheckpointSchemaError(f"{path} is not a checkpoint archive") from e
    with zf:
        names = set(zf.namelist())
        version = zf.read("VERSION").decode().strip() if "VERSION" in names else None
        if version != SCHEMA_VERSION:
            raise CheckpointSchemaError(
                f"{path}: checkpoint schema {version!r} is not supported (expected {SCHEMA_VERSION!r})"
            )
        with np.load(io.BytesIO(zf.read("arrays.npz"))) as npz:
            everything = {k: npz[k] for k in npz.files}
        config = TrainConfig.from_dict(json.loads(zf.read("config.json")))
        meta = json.loads(zf.read("meta.json"))
    arrays = {k: v for k, v in everything.items() if not k.startswith("optim/")}
    optim = {k: v for k, v in everything.items() if k.startswith("optim/")}
    return Checkpoint(config, arrays, optim, meta)


def restore_model(ckpt: Checkpoint) -> PolypFlow:
    model = build_model(ckpt.config)
    state = {k: torch.from_numpy(np.array(v)) for k, v in ckpt.arrays.items()}
    model.load_state_dict(state, strict=True)
    model.eval()
    return model


def restore_optimizer(ckpt: Checkpoint, model: PolypFlow, optimizer: torch.optim.Optimizer) -> None:
    named = dict(model.named_parameters())
    for key, value in ckpt.optimizer.items():
        _, pname, skey = key.split("/", 2)
        optimizer.state[named[pname]][skey] = torch.from_numpy(np.array(value))
