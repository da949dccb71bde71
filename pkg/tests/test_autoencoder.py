"""Encoder-decoder build contracts, training behavior, and persistence."""

import numpy as np
import pytest

from fixsynth import autoencoder as AE
from fixsynth import engine as E
from fixsynth.market import SynthCorpusConfig, build_snapshots, synth_corpus


@pytest.fixture(scope="module")
def snaps():
    panel = synth_corpus(SynthCorpusConfig(n_weeks=130), seed=21)
    return build_snapshots(panel)


@pytest.fixture(scope="module")
def tiny_model(snaps):
    cfg = AE.AeConfig(n=16, steps=120, batch_size=16, seed=3)
    return AE.train(snaps, cfg)


class TestBuild:
    def test_heads_emit_n_length_vectors(self):
        cfg = AE.AeConfig(n=16)
        params = AE.build(cfg)
        x = E.Tensor(np.random.default_rng(0).uniform(-1, 1, (3, 1, 16, 16)))
        preds = AE.forward(params, x, cfg, training=False)
        for head in AE.HEADS:
            assert preds[head].shape == (3, 16)

    def test_vol_head_positive_everywhere(self):
        cfg = AE.AeConfig(n=16)
        params = AE.build(cfg)
        rng = np.random.default_rng(1)
        x = E.Tensor(rng.uniform(-1, 1, (8, 1, 16, 16)))
        preds = AE.forward(params, x, cfg, training=False)
        assert np.all(preds["vol"].data > 0)

    def test_bad_upsample_bookkeeping_rejected(self):
        with pytest.raises(AE.AutoencoderError, match="upsample"):
            AE.AeConfig(n=16, head_upsample=(3, 2))

    def test_bad_encoder_halving_rejected(self):
        with pytest.raises(AE.AutoencoderError, match="halving"):
            AE.AeConfig(n=6, enc_channels=(4, 8, 8))


class TestTrain:
    def test_memorizes_single_snapshot(self, snaps):
        cfg = AE.AeConfig(n=16, steps=2000, batch_size=1, dropout_rate=0.0,
                          lr=5e-4, val_fraction=0.0, seed=5)
        model = AE.train([snaps[0]], cfg)
        assert model.history.loss_total[-1] <= 1e-3

    def test_memorization_loss_trend_nonincreasing(self, snaps):
        cfg = AE.AeConfig(n=16, steps=1200, batch_size=1, dropout_rate=0.0,
                          lr=5e-4, val_fraction=0.0, seed=6)
        model = AE.train([snaps[0]], cfg)
        total = model.history.loss_total
        window = 500
        smoothed = np.convolve(total, np.ones(window) / window, mode="valid")
        # slack for the Adam noise plateau once the loss has collapsed
        assert np.all(np.diff(smoothed) <= 1e-4)

    def test_history_length_equals_steps(self, tiny_model):
        assert len(tiny_model.history) == tiny_model.config.steps

    def test_component_losses_logged(self, tiny_model):
        h = tiny_model.history
        assert np.all(h.loss_vol >= 0) and np.all(h.loss_er >= 0) and np.all(h.loss_fr >= 0)
        assert np.allclose(h.loss_total, h.loss_vol + h.loss_er + h.loss_fr, atol=1e-12)

    def test_seed_reproducibility(self, snaps):
        cfg = AE.AeConfig(n=16, steps=40, batch_size=8, seed=7)
        a = AE.train(snaps, cfg)
        b = AE.train(snaps, cfg)
        assert np.array_equal(a.history.loss_total, b.history.loss_total)
        for name in a.params:
            assert np.array_equal(a.params[name].data, b.params[name].data)

    def test_too_few_snapshots(self, snaps):
        cfg = AE.AeConfig(n=16, batch_size=64)
        with pytest.raises(AE.AutoencoderError, match="batch_size"):
            AE.train(snaps[:10], cfg)


class TestGenerate:
    def test_deterministic_bitwise(self, tiny_model, snaps):
        a = AE.generate(tiny_model, snaps[0].corr)
        b = AE.generate(tiny_model, snaps[0].corr)
        assert np.array_equal(a.volatilities, b.volatilities)
        assert np.array_equal(a.expected_returns, b.expected_returns)
        assert np.array_equal(a.forward_returns, b.forward_returns)

    def test_volatility_strictly_positive(self, tiny_model, snaps):
        for snap in snaps[:10]:
            out = AE.generate(tiny_model, snap.corr)
            assert np.all(out.volatilities > 0)

    def test_order_and_length_follow_input(self, tiny_model, snaps):
        out = AE.generate(tiny_model, snaps[0].corr)
        assert out.asset_ids == snaps[0].corr.asset_ids
        assert out.volatilities.shape == (16,)

    def test_dimension_mismatch_rejected(self, tiny_model):
        from fixsynth.market import CorrelationMatrix, default_asset_ids
        small = CorrelationMatrix(np.eye(8), default_asset_ids(8))
        with pytest.raises(AE.AutoencoderError, match="n=8"):
            AE.generate(tiny_model, small)

    def test_generate_many_matches_single(self, tiny_model, snaps):
        mats = [s.corr for s in snaps[:5]]
        batched = AE.generate_many(tiny_model, mats)
        for m, got in zip(mats, batched):
            single = AE.generate(tiny_model, m)
            assert np.allclose(got.volatilities, single.volatilities, atol=1e-12)
            assert np.allclose(got.forward_returns, single.forward_returns, atol=1e-12)

    def test_synthetic_snapshots_pair_up(self, tiny_model, snaps):
        mats = [s.corr for s in snaps[:4]]
        synth = AE.synthetic_snapshots(tiny_model, mats)
        assert len(synth) == 4
        assert synth[0].date is None
        assert np.array_equal(synth[0].corr.values, mats[0].values)


class TestPersistence:
    def test_roundtrip_preserves_generation(self, tiny_model, snaps, tmp_path):
        path = tmp_path / "ae.bin"
        AE.save_ae(path, tiny_model)
        loaded = AE.load_ae(path)
        a = AE.generate(tiny_model, snaps[0].corr)
        b = AE.generate(loaded, snaps[0].corr)
        assert np.array_equal(a.volatilities, b.volatilities)
        assert np.array_equal(a.expected_returns, b.expected_returns)
        assert loaded.stats == tiny_model.stats
