"""FR/MV simulation sets, the jittered Cholesky, and set combination."""

import datetime as dt

import numpy as np
import pytest

from fixsynth.market import CorrelationMatrix, MarketSnapshot, default_asset_ids
from fixsynth.simulation import (
    MvConfig,
    SimulationError,
    SimulationSet,
    cholesky_psd,
    combine,
    fr_sims,
    load_simset,
    mv_sims,
    save_simset,
)


def make_snapshot(corr, vols, er=None, fr=None, date=dt.date(2020, 1, 6)):
    corr = np.asarray(corr, dtype=float)
    n = corr.shape[0]
    ids = default_asset_ids(n)
    return MarketSnapshot(
        date=date,
        corr=CorrelationMatrix(corr, ids),
        volatilities=np.asarray(vols, dtype=float),
        expected_returns=np.asarray(er if er is not None else np.full(n, 0.03)),
        forward_returns=np.asarray(fr if fr is not None else np.zeros(n)),
    )


@pytest.fixture
def snapshots():
    rng = np.random.default_rng(0)
    out = []
    for k in range(5):
        c = np.corrcoef(rng.normal(size=(40, 4)), rowvar=False)
        np.fill_diagonal(c, 1.0)
        out.append(make_snapshot(
            np.clip((c + c.T) / 2, -1, 1),
            vols=rng.uniform(0.02, 0.1, 4),
            er=rng.uniform(0.0, 0.05, 4),
            fr=rng.normal(0, 0.01, 4),
            date=dt.date(2020, 1, 6) + dt.timedelta(weeks=k),
        ))
    return out


class TestFrSims:
    def test_rows_are_forward_returns(self, snapshots):
        s = fr_sims(snapshots, "Empirical")
        assert s.n_sims == len(snapshots)
        assert s.kind == "FR"
        for k, snap in enumerate(snapshots):
            assert np.array_equal(s.returns[k], snap.forward_returns)

    def test_mu_is_mean_expected_returns(self, snapshots):
        s = fr_sims(snapshots, "Empirical")
        assert np.allclose(s.mu, np.mean([x.expected_returns for x in snapshots], axis=0))

    def test_single_snapshot(self, snapshots):
        s = fr_sims(snapshots[:1], "Synthetic")
        assert s.returns.shape == (1, 4)
        assert np.array_equal(s.mu, snapshots[0].expected_returns)

    def test_empty_rejected(self):
        with pytest.raises(SimulationError, match="non-empty"):
            fr_sims([], "Empirical")

    def test_inconsistent_universe_rejected(self, snapshots):
        other = make_snapshot(np.eye(3), np.full(3, 0.05))
        with pytest.raises(SimulationError, match="asset order"):
            fr_sims(snapshots + [other], "Empirical")


class TestCholeskyPsd:
    def test_identity(self):
        L, eps = cholesky_psd(np.eye(3))
        assert eps == 0.0
        assert np.array_equal(L, np.eye(3))

    def test_hand_factorization(self):
        sigma = np.array([[4.0, 2.0], [2.0, 3.0]])
        L, eps = cholesky_psd(sigma)
        assert eps == 0.0
        assert np.allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]])

    def test_positive_definite_exact(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(6, 6))
        sigma = a @ a.T + 0.5 * np.eye(6)
        L, eps = cholesky_psd(sigma)
        assert eps == 0.0
        assert np.linalg.norm(L @ L.T - sigma, "fro") <= 1e-10 * np.linalg.norm(sigma, "fro")

    def test_rank_deficient_jittered(self):
        v = np.array([1.0, 2.0, 3.0])
        sigma = np.outer(v, v)          # rank one, PSD
        L, eps = cholesky_psd(sigma)
        n = 3
        assert 0 < eps <= 1e-6 * np.trace(sigma) / n
        assert np.linalg.norm(L @ L.T - sigma, "fro") <= n * eps + 1e-12

    def test_zero_matrix_gives_zero_factor(self):
        L, eps = cholesky_psd(np.zeros((4, 4)))
        assert eps == 0.0
        assert np.array_equal(L, np.zeros((4, 4)))

    def test_indefinite_exhausts_schedule(self):
        sigma = np.diag([1.0, -1.0])
        with pytest.raises(SimulationError, match="jitter"):
            cholesky_psd(sigma)

    def test_asymmetric_rejected(self):
        with pytest.raises(SimulationError, match="symmetric"):
            cholesky_psd(np.array([[1.0, 0.5], [0.4, 1.0]]))


class TestMvSims:
    def test_row_count(self, snapshots):
        s = mv_sims(snapshots, MvConfig(draws=10, seed=1), "Empirical")
        assert s.n_sims == len(snapshots) * 10
        assert s.kind == "MV"

    def test_zero_volatility_rows_exactly_zero(self):
        snap = make_snapshot(np.eye(4), np.zeros(4))
        s = mv_sims([snap], MvConfig(draws=6, seed=2), "Empirical")
        assert np.array_equal(s.returns, np.zeros((6, 4)))

    def test_bitwise_reproducible(self, snapshots):
        cfg = MvConfig(draws=4, seed=3)
        a = mv_sims(snapshots, cfg, "Empirical")
        b = mv_sims(snapshots, cfg, "Empirical")
        assert np.array_equal(a.returns, b.returns)

    def test_keyed_draws_independent_of_processing(self, snapshots):
        # a snapshot's block depends only on (seed, snapshot index, draw index)
        cfg = MvConfig(draws=3, seed=4)
        full = mv_sims(snapshots, cfg, "Empirical")
        from fixsynth.simulation import _philox_rng
        snap = snapshots[2]
        sigma = (np.outer(snap.volatilities, snap.volatilities)
                 * snap.corr.values) * cfg.horizon
        L, _ = cholesky_psd(sigma)
        for j in range(3):
            row = L @ _philox_rng(cfg.seed, 2, j).standard_normal(4)
            assert np.array_equal(full.returns[2 * 3 + j], row)

    def test_sample_moments_match_target(self):
        # identity correlation, 10%/yr vols, 1/12 horizon
        n = 4
        snap = make_snapshot(np.eye(n), np.full(n, 0.10))
        cfg = MvConfig(draws=100_000, horizon=1.0 / 12.0, seed=5)
        s = mv_sims([snap], cfg, "Empirical")
        target_sd = 0.10 * np.sqrt(1.0 / 12.0)
        sd = s.returns.std(axis=0, ddof=1)
        assert np.all(np.abs(sd / target_sd - 1.0) < 0.01)
        sigma = np.eye(n) * target_sd ** 2
        err = np.linalg.norm(np.cov(s.returns, rowvar=False) - sigma, "fro")
        assert err <= 5.0 * np.sqrt(2.0 / 100_000) * np.linalg.norm(sigma, "fro")

    def test_bad_config(self):
        with pytest.raises(SimulationError):
            MvConfig(draws=0)
        with pytest.raises(SimulationError):
            MvConfig(horizon=0.0)


class TestCombine:
    def test_weighted_mu_and_rows(self, snapshots):
        a = fr_sims(snapshots[:2], "Empirical")
        b = fr_sims(snapshots, "Synthetic")
        c = combine([a, b])
        assert c.label == "Combined"
        assert c.n_sims == a.n_sims + b.n_sims
        expected_mu = (a.n_sims * a.mu + b.n_sims * b.mu) / (a.n_sims + b.n_sims)
        assert np.allclose(c.mu, expected_mu, atol=1e-15)
        assert np.array_equal(c.returns[:a.n_sims], a.returns)

    def test_single_set_relabeled(self, snapshots):
        a = fr_sims(snapshots, "Empirical")
        c = combine([a])
        assert c.label == "Combined"
        assert np.array_equal(c.returns, a.returns)
        assert np.array_equal(c.mu, a.mu)

    def test_kind_mismatch_rejected(self, snapshots):
        a = fr_sims(snapshots, "Empirical")
        b = mv_sims(snapshots, MvConfig(draws=2, seed=0), "Synthetic")
        with pytest.raises(SimulationError, match="FR with MV|MV with FR"):
            combine([a, b])

    def test_universe_mismatch_rejected(self, snapshots):
        a = fr_sims(snapshots, "Empirical")
        other = fr_sims([make_snapshot(np.eye(3), np.full(3, 0.05))], "Synthetic")
        with pytest.raises(SimulationError, match="universes"):
            combine([a, other])


class TestSerialization:
    def test_roundtrip_exact(self, snapshots, tmp_path):
        s = mv_sims(snapshots, MvConfig(draws=3, seed=7), "Synthetic")
        path = tmp_path / "sims.bin"
        save_simset(path, s)
        back = load_simset(path)
        assert back.label == s.label and back.kind == s.kind
        assert back.asset_ids == s.asset_ids
        assert np.array_equal(back.returns, s.returns)
        assert np.allclose(back.mu, s.mu, atol=1e-15)

    def test_bad_label_rejected(self, snapshots):
        with pytest.raises(SimulationError, match="label"):
            SimulationSet(returns=np.zeros((1, 4)), mu=np.zeros(4),
                          asset_ids=default_asset_ids(4), label="Other", kind="FR")
