"""
Tests for the GDCK checkpoint format and model restore.
"""

import json
import struct

import numpy as np
import pytest
import torch

from core.errors import FormatError
from shapeflow.models.config import TrainConfig
from shapeflow.services.attention import randomize_parameters_
from shapeflow.services.checkpoint import (
    MAGIC,
    RESUME_KEY,
    build_model,
    capture,
    checkpoint_params,
    load_checkpoint,
    load_parameters,
    model_layout,
    restore_optimizer,
    save_checkpoint,
)
from shapeflow.services.evaluator import evaluate
from shapeflow.services.network import DeformationModel
from shapeflow.services.trainer import HoldCosineLRScheduler, make_optimizer


@pytest.fixture
def model(tiny_config):
    net = DeformationModel(tiny_config)
    return randomize_parameters_(net, torch.Generator().manual_seed(4))


@pytest.fixture
def saved(tmp_path, model):
    path = tmp_path / "model.gdck"
    save_checkpoint(capture(model, epoch=3), path)
    return path


class TestLayout:
    def test_offsets_are_contiguous(self, model):
        layout = model_layout(model)
        assert [e.name for e in layout] == [name for name, _ in model.named_parameters()]
        offset = 0
        for entry in layout:
            assert entry.offset == offset
            offset += entry.size
        assert offset == sum(p.numel() for p in model.parameters())

    def test_checkpoint_params_by_name(self, model):
        ckpt = capture(model)
        weight = checkpoint_params(ckpt, "velocity.head.weight")
        np.testing.assert_array_equal(weight, model.velocity.head.weight.detach().numpy())
        assert checkpoint_params(ckpt, "no.such.param") is None


class TestRoundTrip:
    def test_payload_and_metadata(self, saved, model, tiny_config):
        ckpt = load_checkpoint(saved)
        assert ckpt.config == tiny_config
        assert ckpt.epoch == 3
        assert ckpt.step == 0
        assert ckpt.layout == model_layout(model)
        np.testing.assert_array_equal(ckpt.params, capture(model).params)
        assert not ckpt.exp_avg.any() and not ckpt.exp_avg_sq.any()

    def test_rewrite_is_byte_identical(self, tmp_path, saved):
        save_checkpoint(load_checkpoint(saved), tmp_path / "again.gdck")
        assert (tmp_path / "again.gdck").read_bytes() == saved.read_bytes()

    def test_build_model_restores_parameters(self, saved, model):
        rebuilt = build_model(load_checkpoint(saved))
        for (name, a), (_, b) in zip(model.named_parameters(), rebuilt.named_parameters()):
            assert torch.equal(a, b), name

    def test_identical_evaluation_after_reload(self, saved, model, tiny_config):
        from shapeflow.services.gradcheck import tiny_pair

        pairs = [tiny_pair(tiny_config, seed=s) for s in (0, 1)]
        before = evaluate(model, pairs, workers=1)
        after = evaluate(load_checkpoint(saved), pairs, workers=1)
        assert before.to_text() == after.to_text()

    def test_optimizer_state_round_trip(self, tmp_path, model, tiny_config):
        optimizer = make_optimizer(model, tiny_config)
        scheduler = HoldCosineLRScheduler(optimizer, max_steps=10, hold_steps=2, init_lr=1e-3, min_lr=1e-5)
        for _ in range(3):
            optimizer.zero_grad()
            sum(p.pow(2).sum() for p in model.parameters()).backward()
            optimizer.step()
            scheduler.step()
        save_checkpoint(capture(model, optimizer, scheduler, epoch=1), tmp_path / "opt.gdck")
        ckpt = load_checkpoint(tmp_path / "opt.gdck")
        assert ckpt.step == 3
        assert ckpt.scheduler["current_step"] == 3

        fresh = DeformationModel(tiny_config)
        load_parameters(ckpt, fresh)
        fresh_opt = make_optimizer(fresh, tiny_config)
        restore_optimizer(ckpt, fresh, fresh_opt)
        for p, q in zip(model.parameters(), fresh.parameters()):
            assert torch.equal(optimizer.state[p]["exp_avg"], fresh_opt.state[q]["exp_avg"])
            assert torch.equal(optimizer.state[p]["exp_avg_sq"], fresh_opt.state[q]["exp_avg_sq"])
            assert float(fresh_opt.state[q]["step"]) == 3.0


class TestCorruption:
    def test_bad_magic(self, tmp_path, saved):
        data = bytearray(saved.read_bytes())
        data[:4] = b"XXXX"
        (tmp_path / "bad.gdck").write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "bad.gdck")

    def test_unsupported_version(self, tmp_path, saved):
        data = bytearray(saved.read_bytes())
        data[4:8] = struct.pack("<I", 99)
        (tmp_path / "v.gdck").write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "v.gdck")

    @pytest.mark.parametrize("cut", [3, 20, 200])
    def test_truncated(self, tmp_path, saved, cut):
        (tmp_path / "cut.gdck").write_bytes(saved.read_bytes()[:-cut])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "cut.gdck")

    def test_trailing_bytes(self, tmp_path, saved):
        (tmp_path / "long.gdck").write_bytes(saved.read_bytes() + b"\0\0")
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "long.gdck")

    def test_corrupt_header(self, tmp_path, saved):
        data = bytearray(saved.read_bytes())
        data[16] = 0xFF
        (tmp_path / "hdr.gdck").write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "hdr.gdck")

    def test_layout_mismatch(self, saved, tiny_config):
        other = DeformationModel(tiny_config.model_copy(update={"geo_dim": 16}))
        with pytest.raises(FormatError):
            load_parameters(load_checkpoint(saved), other)

    def test_magic_constant(self, saved):
        assert saved.read_bytes()[:4] == MAGIC

    def test_header_is_the_config_snapshot(self, saved, tiny_config):
        data = saved.read_bytes()
        (hlen,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + hlen])
        resume = header.pop(RESUME_KEY)
        assert TrainConfig(**header) == tiny_config
        assert resume == {"step": 0, "scheduler": {}}

    def test_header_must_be_an_object(self, tmp_path, saved):
        data = saved.read_bytes()
        (hlen,) = struct.unpack("<Q", data[8:16])
        body = b"[1, 2]"
        patched = data[:8] + struct.pack("<Q", len(body)) + body + data[16 + hlen:]
        (tmp_path / "list.gdck").write_bytes(patched)
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "list.gdck")
