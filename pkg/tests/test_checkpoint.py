"""Checkpoint container: round trips, resume bit-compatibility, transfer."""

import numpy as np
import pytest

from specmae.checkpoint import (config_fingerprint, load_checkpoint, restore_model,
                                resume_optimizer, save_checkpoint, transfer_pretrained,
                                verify_resume_fingerprint)
from specmae.dsp import NormStats
from specmae.model import ModelConfig, SpecMAE
from specmae.optim import AdamW
from specmae.training import TrainSettings, pretrain_loop

SMALL = ModelConfig(enc_layers=1, enc_dim=32, enc_heads=2, dec_layers=1, dec_dim=16,
                    dec_heads=2, istft_dec_dim=32, preset="custom")


def trained_model(steps=3, seed=0):
    rng = np.random.default_rng(5)
    chunks = (rng.standard_normal((4, 32, 64)) - 2).astype(np.float32)
    model = SpecMAE.build(SMALL, seed=seed)
    opt = AdamW(model.params)
    settings = TrainSettings(steps=steps, batch=2, peak_lr=1e-3, seed=seed)
    logs, _ = pretrain_loop(model, opt, chunks, settings)
    return model, opt, chunks, [l.loss for l in logs]


class TestRoundTrip:
    def test_save_load_restores_tensors_exactly(self, tmp_path):
        model, opt, _, _ = trained_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, opt, step=3, norm_stats=NormStats(-2.0, 1.5))
        ckpt = load_checkpoint(path)
        assert ckpt.variant == "pretrain" and ckpt.step == 3
        assert ckpt.norm_stats.mean == -2.0 and ckpt.norm_stats.std == 1.5
        for name, t in model.params:
            np.testing.assert_array_equal(ckpt.tensors[name], t.data)

    def test_resume_is_bit_compatible_with_uninterrupted_run(self, tmp_path):
        # run 6 steps straight vs run 3, checkpoint, reload, run 3 more
        rng = np.random.default_rng(5)
        chunks = (rng.standard_normal((4, 32, 64)) - 2).astype(np.float32)

        model_a = SpecMAE.build(SMALL, seed=0)
        opt_a = AdamW(model_a.params)
        logs_a, _ = pretrain_loop(model_a, opt_a, chunks,
                                  TrainSettings(steps=6, batch=2, peak_lr=1e-3, seed=0))

        model_b = SpecMAE.build(SMALL, seed=0)
        opt_b = AdamW(model_b.params)
        sched_settings = TrainSettings(steps=6, batch=2, peak_lr=1e-3, seed=0)
        from specmae.optim import lr_at
        from specmae.training import _batch_indices, _mask_seed, pretrain_step

        sched = sched_settings.schedule()
        for step in range(3):
            idx = _batch_indices(0, step, 4, 2)
            seeds = [_mask_seed(0, step, i) for i in range(2)]
            pretrain_step(model_b, opt_b, chunks[idx], 0.75, lr_at(sched, step), seeds)
        path = tmp_path / "mid.ckpt"
        save_checkpoint(path, model_b, opt_b, step=3, norm_stats=None)

        ckpt = load_checkpoint(path)
        model_c = restore_model(ckpt)
        opt_c = resume_optimizer(ckpt, model_c)
        resumed = []
        for step in range(3, 6):
            idx = _batch_indices(0, step, 4, 2)
            seeds = [_mask_seed(0, step, i) for i in range(2)]
            resumed.append(
                pretrain_step(model_c, opt_c, chunks[idx], 0.75, lr_at(sched, step), seeds))
        assert resumed == [l.loss for l in logs_a[3:]]

    def test_fingerprint_mismatch_rejected(self, tmp_path):
        model, opt, _, _ = trained_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, opt, step=3, norm_stats=None)
        ckpt = load_checkpoint(path)
        other = ModelConfig(enc_layers=2, enc_dim=32, enc_heads=2, dec_layers=1, dec_dim=16,
                            dec_heads=2, istft_dec_dim=32, preset="custom")
        with pytest.raises(ValueError, match="fingerprint"):
            verify_resume_fingerprint(ckpt, other, "pretrain")
        with pytest.raises(ValueError, match="variant"):
            verify_resume_fingerprint(ckpt, SMALL, "vanilla")

    def test_truncated_file_rejected(self, tmp_path):
        model, opt, _, _ = trained_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, opt, step=3, norm_stats=None)
        raw = path.read_bytes()
        (tmp_path / "cut.ckpt").write_bytes(raw[: len(raw) - 64])
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(tmp_path / "cut.ckpt")
        (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(tmp_path / "junk.ckpt")

    def test_manifest_counts_params_plus_moments(self, tmp_path):
        model, opt, _, _ = trained_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, opt, step=3, norm_stats=None)
        ckpt = load_checkpoint(path)
        n_params = len(model.params.names())
        assert len(ckpt.tensors) == n_params + 2 * n_params  # + adam m and v

    def test_fingerprint_depends_on_config(self):
        a = config_fingerprint(SMALL)
        b = config_fingerprint(ModelConfig(**{**SMALL.to_dict(), "enc_layers": 2}))
        assert a != b


class TestTransfer:
    def test_mel_variant_receives_encoder_and_decoder(self, tmp_path):
        model, opt, _, _ = trained_model()
        path = tmp_path / "pre.ckpt"
        save_checkpoint(path, model, opt, step=3, norm_stats=NormStats(-1.0, 2.0))
        ckpt = load_checkpoint(path)

        se = SpecMAE.build(SMALL, seed=99, variant="additive")
        copied = transfer_pretrained(ckpt, se)
        assert any(n.startswith("enc.") for n in copied)
        assert any(n.startswith("dec.") for n in copied)
        assert "mask_token" in copied and "cls" in copied
        np.testing.assert_array_equal(se.params["enc.0.qkv.w"].data,
                                      ckpt.tensors["enc.0.qkv.w"])
        # head stays at its zero init
        assert np.all(se.params["head.se.w"].data == 0.0)

    def test_istft_and_classifier_receive_encoder_only(self, tmp_path):
        model, opt, _, _ = trained_model()
        path = tmp_path / "pre.ckpt"
        save_checkpoint(path, model, opt, step=3, norm_stats=None)
        ckpt = load_checkpoint(path)
        for variant in ("istft", "classifier"):
            m = SpecMAE.build(SMALL, seed=1, variant=variant)
            copied = transfer_pretrained(ckpt, m)
            assert any(n.startswith("enc.") for n in copied)
            assert not any(n.startswith(("dec.", "fdec.", "head.")) for n in copied)

    def test_transfer_requires_pretrain_source_and_matching_shapes(self, tmp_path):
        model, opt, _, _ = trained_model()
        path = tmp_path / "pre.ckpt"
        save_checkpoint(path, model, opt, step=3, norm_stats=None)
        ckpt = load_checkpoint(path)
        wider = ModelConfig(enc_layers=1, enc_dim=64, enc_heads=2, dec_layers=1, dec_dim=16,
                            dec_heads=2, istft_dec_dim=32, preset="custom")
        with pytest.raises(ValueError, match="shape"):
            transfer_pretrained(ckpt, SpecMAE.build(wider, seed=0, variant="additive"))

        se = SpecMAE.build(SMALL, seed=0, variant="additive")
        se_path = tmp_path / "se.ckpt"
        save_checkpoint(se_path, se, None, step=0, norm_stats=None)
        with pytest.raises(ValueError, match="pretrain"):
            transfer_pretrained(load_checkpoint(se_path), se)
