"""Run configuration and the flat ``key = value`` config format with dotted keys."""
import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Dict, Tuple

from .unet import DEFAULT_WIDTHS


@dataclass(frozen=True)
class ModelConfig:
    widths: Tuple[int, ...] = DEFAULT_WIDTHS
    image_size: int = 352
    attn_dim: int = 64
    attn_kernel: int = 7
    token_stride: int = 8
    use_attention: bool = True
    use_dct: bool = True
    n_steps: int = 10
    init_noise_std: float = 0.0


@dataclass(frozen=True)
class LossConfig:
    lambda_fm: float = 1.0
    weight_window: int = 31
    weight_gain: float = 5.0
    logit_eps: float = 0.05


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-2
    seed: int = 0
    detach_trajectory: bool = False
    augment: bool = False
    probe_size: int = 8
    max_steps: int = 0  # 0 = no cap beyond epochs
    eval_every: int = 1  # epochs between probe evaluations / checkpoints
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        for name in ("epochs", "batch_size", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.model.n_steps < 1:
            raise ValueError("model.n_steps must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        d = dict(d)
        model = dict(d.pop("model", {}))
        if "widths" in model:
            model["widths"] = tuple(model["widths"])
        return cls(model=ModelConfig(**model), loss=LossConfig(**d.pop("loss", {})), **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def config_keys(cfg: TrainConfig = None) -> Dict[str, Any]:
    """Every dotted key with its current value (``train.*`` keys are top-level fields)."""
    cfg = cfg or TrainConfig()
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for g in dataclasses.fields(value):
                out[f"{f.name}.{g.name}"] = getattr(value, g.name)
        else:
            out[f.name] = value
    return out


def _coerce(raw: str, like: Any):
    raw = raw.strip()
    if isinstance(like, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    if isinstance(like, tuple):
        return tuple(int(v) for v in raw.strip("()[]").replace(",", " ").split())
    return raw


def apply_overrides(cfg: TrainConfig, overrides: Dict[str, str]) -> TrainConfig:
    """Return a new config with dotted-key string overrides applied."""
    known = config_keys(cfg)
    d = cfg.to_dict()
    for key, raw in overrides.items():
        key = key[len("train."):] if key.startswith("train.") else key
        if key not in known:
            raise KeyError(f"unknown config key: {key}")
        value = _coerce(raw, known[key]) if isinstance(raw, str) else raw
        if "." in key:
            section, name = key.split(".", 1)
            d[section][name] = value
        else:
            d[key] = value
    return TrainConfig.from_dict(d)


def parse_config_text(text: str) -> Dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path, base: TrainConfig = None) -> TrainConfig:
    with open(path) as f:
        return apply_overrides(base or TrainConfig(), parse_config_text(f.read()))


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for key, value in config_keys(cfg).items():
        if isinstance(value, tuple):
            value = ", ".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
