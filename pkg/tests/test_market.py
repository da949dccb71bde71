"""Panel ingestion, snapshot construction, and correlation repair."""

import datetime as dt
import math

import numpy as np
import pytest

from fixsynth.market import (
    CSV_HEADER,
    CorrelationMatrix,
    MarketDataError,
    MarketSnapshot,
    ProjectionError,
    ReturnPanel,
    SynthCorpusConfig,
    build_snapshots,
    correlation_defects,
    ingest_returns,
    load_matrices,
    load_snapshots,
    nearest_correlation,
    save_matrices,
    save_snapshots,
    synth_corpus,
    write_panel_csv,
)

MONDAY = dt.date(2020, 1, 6)


def make_panel(returns, expected=None, kinds=None):
    returns = np.asarray(returns, dtype=float)
    T, n = returns.shape
    if expected is None:
        expected = np.full((T, n), 0.03)
    if kinds is None:
        kinds = ("bond",) * n
    ids = tuple(f"A{i}" for i in range(n))
    dates = tuple(MONDAY + dt.timedelta(weeks=w) for w in range(T))
    return ReturnPanel(ids, kinds, dates, returns, expected)


def write_csv(path, rows, header=CSV_HEADER):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")


def csv_rows(n_assets=3, n_weeks=6, skip=None):
    rows = []
    for w in range(n_weeks):
        date = MONDAY + dt.timedelta(weeks=w)
        for a in range(n_assets):
            if skip and (w, a) in skip:
                continue
            rows.append([date.isoformat(), f"A{a}", "bond", 0.001 * (a + 1) * (-1) ** w, 0.03])
    return rows


class TestIngest:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "panel.csv"
        write_csv(path, csv_rows(n_assets=3, n_weeks=120))
        panel = ingest_returns(path)
        assert panel.n_assets == 3
        assert panel.n_weeks == 120
        assert panel.asset_ids == ("A0", "A1", "A2")

    def test_gap_week_named(self, tmp_path):
        rows = [r for r in csv_rows(n_weeks=6)
                if r[0] != (MONDAY + dt.timedelta(weeks=3)).isoformat()]
        path = tmp_path / "panel.csv"
        write_csv(path, rows)
        with pytest.raises(MarketDataError, match="2020-01-27"):
            ingest_returns(path)

    def test_duplicate_entry_rejected(self, tmp_path):
        rows = csv_rows()
        rows.append(rows[0])
        path = tmp_path / "panel.csv"
        write_csv(path, rows)
        with pytest.raises(MarketDataError, match="duplicate"):
            ingest_returns(path)

    def test_missing_cell_listed(self, tmp_path):
        path = tmp_path / "panel.csv"
        write_csv(path, csv_rows(skip={(2, 1)}))
        with pytest.raises(MarketDataError, match="A1@2020-01-20"):
            ingest_returns(path)

    def test_non_numeric_cell_located(self, tmp_path):
        rows = csv_rows()
        rows[4][3] = "oops"
        path = tmp_path / "panel.csv"
        write_csv(path, rows)
        with pytest.raises(MarketDataError, match="row 6, column 'weekly_return'"):
            ingest_returns(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "panel.csv"
        write_csv(path, csv_rows(), header=["date", "id", "kind", "ret", "er"])
        with pytest.raises(MarketDataError, match="header"):
            ingest_returns(path)

    def test_bond_segment_reordered_first(self, tmp_path):
        rows = []
        for w in range(3):
            date = (MONDAY + dt.timedelta(weeks=w)).isoformat()
            rows.append([date, "EUR", "fx", 0.001, 0.0])
            rows.append([date, "UST", "bond", 0.002 * (-1) ** w + 0.0007 * w, 0.03])
        path = tmp_path / "panel.csv"
        write_csv(path, rows)
        panel = ingest_returns(path)
        assert panel.asset_ids == ("UST", "EUR")
        assert panel.kinds == ("bond", "fx")

    def test_panel_csv_round_trip_exact(self, tmp_path):
        panel = synth_corpus(SynthCorpusConfig(n_bonds=3, n_fx=1, n_blocks=2,
                                               n_weeks=20), seed=5)
        path = tmp_path / "panel.csv"
        write_panel_csv(path, panel)
        back = ingest_returns(path)
        assert back.asset_ids == panel.asset_ids
        assert np.array_equal(back.returns, panel.returns)
        assert np.array_equal(back.expected_returns, panel.expected_returns)


class TestBuildSnapshots:
    def test_count_rule(self):
        rng = np.random.default_rng(0)
        panel = make_panel(rng.normal(0, 0.01, size=(60, 3)))
        snaps = build_snapshots(panel, window=52, horizon=4)
        assert len(snaps) == 60 - 52 - 4 + 1

    def test_identical_series_correlate_fully(self):
        rng = np.random.default_rng(1)
        base = rng.normal(0, 0.01, size=60)
        returns = np.column_stack([base, base, rng.normal(0, 0.01, size=60)])
        snaps = build_snapshots(make_panel(returns))
        assert snaps[0].corr.values[0, 1] == pytest.approx(1.0, abs=1e-9)

    def test_volatility_annualization(self):
        rng = np.random.default_rng(2)
        returns = rng.normal(0, 0.01, size=(56, 2))
        panel = make_panel(returns)
        snaps = build_snapshots(panel)
        window = panel.returns[:52]
        expected = window.std(axis=0, ddof=1) * math.sqrt(52)
        assert np.allclose(snaps[0].volatilities, expected)
        # 1% weekly stdev annualizes to ~7.21%; allow 52-sample estimation noise
        assert abs(snaps[0].volatilities[0] - 0.01 * math.sqrt(52)) < 0.02

    def test_forward_return_compounds(self):
        rng = np.random.default_rng(3)
        returns = rng.normal(0, 0.005, size=(56, 1))
        returns[52:, 0] = 0.01
        snaps = build_snapshots(make_panel(returns))
        assert snaps[0].forward_returns[0] == pytest.approx(1.01 ** 4 - 1.0)

    def test_zero_variance_window_names_asset(self):
        returns = np.random.default_rng(4).normal(0, 0.01, size=(56, 2))
        returns[:, 1] = 0.0
        with pytest.raises(MarketDataError, match="A1"):
            build_snapshots(make_panel(returns))

    def test_too_short_panel(self):
        with pytest.raises(MarketDataError, match="window"):
            build_snapshots(make_panel(np.zeros((10, 2))))

    def test_asset_order_preserved(self):
        rng = np.random.default_rng(5)
        panel = make_panel(rng.normal(0, 0.01, size=(60, 4)))
        for snap in build_snapshots(panel):
            assert snap.asset_ids == panel.asset_ids


class TestNearestCorrelation:
    def test_valid_input_unchanged(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(40, 5))
        c = np.corrcoef(x, rowvar=False)
        np.fill_diagonal(c, 1.0)
        out = nearest_correlation(c)
        assert np.linalg.norm(out.values - c, "fro") <= 1e-10

    def test_2x2_clamps_to_one(self):
        out = nearest_correlation(np.array([[1.0, 1.2], [1.2, 1.0]]))
        assert out.values[0, 1] == pytest.approx(1.0, abs=1e-7)

    def test_random_perturbation_beats_random_candidates(self):
        # optimality spot check: the projection must be closer to the input
        # than any of 1,000 random valid correlation matrices
        rng = np.random.default_rng(7)
        base = np.corrcoef(rng.normal(size=(30, 5)), rowvar=False)
        noisy = base + rng.normal(0, 0.25, size=(5, 5))
        noisy = (noisy + noisy.T) / 2.0
        np.fill_diagonal(noisy, 1.0)
        out = nearest_correlation(noisy)
        assert not correlation_defects(out.values)
        d_proj = np.linalg.norm(out.values - noisy, "fro")
        for _ in range(1000):
            cand = np.corrcoef(rng.normal(size=(8, 5)), rowvar=False)
            np.fill_diagonal(cand, 1.0)
            assert np.linalg.norm(cand - noisy, "fro") >= d_proj - 1e-12

    def test_residuals_monotone_nonincreasing(self):
        for seed in range(10):
            r = np.random.default_rng(seed)
            noisy = r.normal(size=(6, 6))
            noisy = (noisy + noisy.T) / 2.0
            np.fill_diagonal(noisy, 1.0)
            _, residuals = nearest_correlation(noisy, return_residuals=True)
            diffs = np.diff(residuals)
            assert np.all(diffs <= 1e-14)

    def test_idempotent(self):
        rng = np.random.default_rng(9)
        noisy = rng.normal(size=(5, 5))
        out = nearest_correlation((noisy + noisy.T) / 2.0)
        again = nearest_correlation(out)
        assert np.linalg.norm(again.values - out.values, "fro") <= 1e-10

    def test_max_iter_error_carries_iterate(self):
        noisy = np.array([[1.0, 1.5], [1.5, 1.0]])
        with pytest.raises(ProjectionError) as exc:
            nearest_correlation(noisy, max_iter=2)
        assert exc.value.last_iterate.shape == (2, 2)
        assert exc.value.residual > 0


class TestSynthCorpus:
    def test_single_block_hits_target_correlation(self):
        cfg = SynthCorpusConfig(n_bonds=4, n_fx=0, n_blocks=1,
                                intra_block_corr=(0.9, 0.9),
                                market_loading=(0.0, 0.0),
                                n_weeks=500, regime_length=0)
        panel = synth_corpus(cfg, seed=11)
        corr = np.corrcoef(panel.returns, rowvar=False)
        off = corr[~np.eye(4, dtype=bool)]
        assert np.all(np.abs(off - 0.9) < 0.05)

    def test_null_model_has_no_correlation(self):
        cfg = SynthCorpusConfig(n_bonds=6, n_fx=0, n_blocks=1,
                                intra_block_corr=(0.0, 0.0),
                                market_loading=(0.0, 0.0),
                                n_weeks=500, regime_length=0)
        panel = synth_corpus(cfg, seed=12)
        corr = np.corrcoef(panel.returns, rowvar=False)
        off = corr[~np.eye(6, dtype=bool)]
        assert np.mean(np.abs(off)) <= 0.1

    def test_same_seed_identical(self):
        cfg = SynthCorpusConfig(n_weeks=120)
        a = synth_corpus(cfg, seed=13)
        b = synth_corpus(cfg, seed=13)
        assert np.array_equal(a.returns, b.returns)
        assert np.array_equal(a.expected_returns, b.expected_returns)

    def test_too_many_blocks_rejected(self):
        with pytest.raises(MarketDataError, match="n_blocks"):
            synth_corpus(SynthCorpusConfig(n_bonds=2, n_fx=1, n_blocks=5), seed=0)

    def test_corpus_snapshots_all_valid(self):
        cfg = SynthCorpusConfig(n_bonds=6, n_fx=2, n_blocks=3, n_weeks=140,
                                regime_length=60)
        panel = synth_corpus(cfg, seed=14)
        snaps = build_snapshots(panel)
        assert len(snaps) == 140 - 52 - 4 + 1
        for snap in snaps:
            assert not correlation_defects(snap.corr.values)
            assert np.all(snap.volatilities >= 0)


class TestSnapshotIO:
    def test_jsonl_round_trip(self, tmp_path):
        panel = synth_corpus(SynthCorpusConfig(n_bonds=4, n_fx=1, n_blocks=2,
                                               n_weeks=60), seed=15)
        snaps = build_snapshots(panel)
        path = tmp_path / "snaps.jsonl"
        save_snapshots(path, snaps)
        back = load_snapshots(path)
        assert len(back) == len(snaps)
        for a, b in zip(snaps, back):
            assert a.date == b.date
            assert a.asset_ids == b.asset_ids
            assert np.allclose(a.corr.values, b.corr.values, atol=1e-15)
            assert np.allclose(a.forward_returns, b.forward_returns, atol=1e-15)

    def test_matrix_only_round_trip(self, tmp_path):
        rng = np.random.default_rng(16)
        mats = []
        for _ in range(3):
            c = np.corrcoef(rng.normal(size=(50, 4)), rowvar=False)
            np.fill_diagonal(c, 1.0)
            mats.append(nearest_correlation(c))
        path = tmp_path / "mats.jsonl"
        save_matrices(path, mats)
        back = load_matrices(path)
        assert len(back) == 3
        assert np.allclose(back[0].values, mats[0].values, atol=1e-15)

    def test_missing_file_named(self, tmp_path):
        with pytest.raises(MarketDataError, match="nowhere.jsonl"):
            load_snapshots(tmp_path / "nowhere.jsonl")
