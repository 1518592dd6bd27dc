import dataclasses
import zipfile

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from polypflow.checkpoint import (SCHEMA_VERSION, CheckpointSchemaError, build_model, load_checkpoint,
                                  restore_model, restore_optimizer, save_checkpoint, snapshot)
from polypflow.config import (ModelConfig, TrainConfig, apply_overrides, config_keys, dump_config, load_config,
                              parse_config_text)
from polypflow.training import make_optimizer

TINY = TrainConfig(model=ModelConfig(widths=(4, 8, 16, 32), image_size=16, attn_dim=4))


class TestConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.model.widths == (64, 128, 256, 512) and cfg.model.image_size == 352
        assert cfg.model.n_steps == 10 and cfg.loss.lambda_fm == 1.0

    def test_parse_text(self):
        text = "# comment\nlr = 0.001\n\nmodel.widths = 4, 8, 16, 32  # tiny\ntrain.epochs=3\n"
        assert parse_config_text(text) == {"lr": "0.001", "model.widths": "4, 8, 16, 32", "train.epochs": "3"}

    def test_parse_rejects_garbage(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_config_text("lr = 1\nnonsense\n")

    def test_overrides_typed(self):
        cfg = apply_overrides(TrainConfig(), {"lr": "0.5", "model.use_dct": "false", "model.widths": "(1,2,3,4)",
                                              "train.epochs": "7", "loss.lambda_fm": "0"})
        assert cfg.lr == 0.5 and cfg.model.use_dct is False and cfg.model.widths == (1, 2, 3, 4)
        assert cfg.epochs == 7 and cfg.loss.lambda_fm == 0.0

    def test_unknown_key(self):
        with pytest.raises(KeyError, match="model.nope"):
            apply_overrides(TrainConfig(), {"model.nope": "1"})

    def test_bad_boolean(self):
        with pytest.raises(ValueError):
            apply_overrides(TrainConfig(), {"augment": "maybe"})

    @pytest.mark.parametrize("kw", [{"epochs": 0}, {"batch_size": 0}, {"lr": -1.0}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_zero_steps_rejected(self):
        with pytest.raises(ValueError):
            apply_overrides(TrainConfig(), {"model.n_steps": "0"})

    def test_dump_load_round_trip(self, tmp_path):
        cfg = apply_overrides(TINY, {"lr": "0.003", "detach_trajectory": "true"})
        (tmp_path / "c.txt").write_text(dump_config(cfg))
        assert load_config(tmp_path / "c.txt") == cfg

    def test_dict_round_trip(self):
        assert TrainConfig.from_dict(TINY.to_dict()) == TINY

    def test_every_key_listed(self):
        keys = config_keys()
        assert "lr" in keys and "model.attn_dim" in keys and "loss.weight_gain" in keys


@given(st.floats(0, 1), st.integers(1, 50), st.booleans())
def test_override_round_trip(lr, steps, flag):
    cfg = apply_overrides(TrainConfig(), {"lr": repr(lr), "model.n_steps": str(steps), "augment": str(flag)})
    assert (cfg.lr, cfg.model.n_steps, cfg.augment) == (lr, steps, flag)


def _trained_model(cfg=TINY, seed=0):
    torch.manual_seed(seed)
    model = build_model(cfg)
    with torch.no_grad():
        model.field.mask.normal_()
    opt = make_optimizer(model, cfg)
    x = torch.rand(2, 3, 16, 16)
    model(x).final.square().mean().backward()
    opt.step()
    return model, opt


class TestCheckpoint:
    def test_forward_bitwise_stable(self, tmp_path):
        model, opt = _trained_model()
        model.eval()
        x = torch.rand(2, 3, 16, 16, generator=torch.Generator().manual_seed(3))
        with torch.no_grad():
            before = model(x).final
        save_checkpoint(snapshot(model, TINY, opt, epoch=4), tmp_path / "a.ckpt")
        restored = restore_model(load_checkpoint(tmp_path / "a.ckpt"))
        with torch.no_grad():
            after = restored(x).final
        assert torch.equal(before, after)

    def test_arrays_bitwise(self, tmp_path):
        model, opt = _trained_model()
        save_checkpoint(snapshot(model, TINY, opt), tmp_path / "a.ckpt")
        ck = load_checkpoint(tmp_path / "a.ckpt")
        for k, v in model.state_dict().items():
            assert np.array_equal(ck.arrays[k], v.numpy()), k

    def test_embedded_config(self, tmp_path):
        cfg = dataclasses.replace(TINY, lr=0.123, seed=9)
        model = build_model(cfg)
        save_checkpoint(snapshot(model, cfg, epoch=2, step=5), tmp_path / "a.ckpt")
        ck = load_checkpoint(tmp_path / "a.ckpt")
        assert ck.config == cfg and ck.epoch == 2 and ck.meta["step"] == 5

    def test_archive_layout(self, tmp_path):
        save_checkpoint(snapshot(build_model(TINY), TINY), tmp_path / "a.ckpt")
        with zipfile.ZipFile(tmp_path / "a.ckpt") as zf:
            assert set(zf.namelist()) == {"VERSION", "arrays.npz", "config.json", "meta.json"}
            assert zf.read("VERSION").decode() == SCHEMA_VERSION

    def test_optimizer_restored(self, tmp_path):
        model, opt = _trained_model()
        save_checkpoint(snapshot(model, TINY, opt), tmp_path / "a.ckpt")
        ck = load_checkpoint(tmp_path / "a.ckpt")
        model2 = restore_model(ck)
        opt2 = make_optimizer(model2, TINY)
        restore_optimizer(ck, model2, opt2)
        named2 = dict(model2.named_parameters())
        for name, p in model.named_parameters():
            for key, value in opt.state[p].items():
                assert torch.equal(torch.as_tensor(value), opt2.state[named2[name]][key]), (name, key)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.ckpt"):
            load_checkpoint(tmp_path / "nope.ckpt")

    def test_not_a_zip(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"garbage")
        with pytest.raises(CheckpointSchemaError):
            load_checkpoint(tmp_path / "x.ckpt")

    def test_wrong_version(self, tmp_path):
        save_checkpoint(snapshot(build_model(TINY), TINY), tmp_path / "a.ckpt")
        with zipfile.ZipFile(tmp_path / "a.ckpt") as src, zipfile.ZipFile(tmp_path / "b.ckpt", "w") as dst:
            for name in src.namelist():
                dst.writestr(name, b"polypflow-checkpoint/0" if name == "VERSION" else src.read(name))
        with pytest.raises(CheckpointSchemaError, match="not supported"):
            load_checkpoint(tmp_path / "b.ckpt")

    def test_missing_tensor(self, tmp_path):
        ck = snapshot(build_model(TINY), TINY)
        del ck.arrays["field.mask"]
        save_checkpoint(ck, tmp_path / "a.ckpt")
        with pytest.raises(RuntimeError):
            restore_model(load_checkpoint(tmp_path / "a.ckpt"))
