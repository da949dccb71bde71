"""Pipeline orchestration: one JSON config, one command per stage.

Stages read and write files in the run's output directory, so any stage can
be re-run in isolation; a manifest (config hash, derived seeds, versions)
accompanies every command.  One master seed fans out to per-stage seeds by
hashing the stage name, making stages individually reproducible.

Commands: ingest | synth-corpus | train-gan | sample | train-ae |
generate-dataset | metrics | backtest | report.
Exit codes: 0 success, 1 validation error (bad config, missing artifact),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, autoencoder, corrgan, market, metrics
from .allocator import Bounds
from .backtest import (
    load_experiments_jsonl,
    report,
    run_grid,
    write_experiments_jsonl,
    write_summary_txt,
    write_table4_csv,
)
from .simulation import MvConfig

log = logging.getLogger("fixsynth")


class ConfigError(Exception):
    """Configuration or missing-artifact problem (exit code 1)."""


# artifact filenames within the output directory
PANEL_CSV = "corpus.csv"
TRAIN_SNAPSHOTS = "train_snapshots.jsonl"
TEST_PANEL_CSV = "test_panel.csv"
GAN_WEIGHTS = "gan.bin"
SAMPLED_MATRICES = "sampled_matrices.jsonl"
AE_WEIGHTS = "autoencoder.bin"
SYNTH_SNAPSHOTS = "synth_snapshots.jsonl"
METRICS_CSV = "metrics_table.csv"
TABLE4_CSV = "table4.csv"
EXPERIMENTS_JSONL = "experiments.jsonl"
SUMMARY_TXT = "summary.txt"


def stage_seed(master_seed: int, stage: str) -> int:
    """Deterministic 63-bit per-stage seed derived from the master seed."""
    digest = hashlib.sha256(f"{master_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclasses.dataclass
class RunConfig:
    out_dir: Path
    master_seed: int
    input_csv: Optional[Path]
    train_end: Optional[str]            # ISO date; test period starts after it
    corpus: market.SynthCorpusConfig
    gan: dict                           # overrides for corrgan.GanConfig
    ae: dict                            # overrides for autoencoder.AeConfig
    mv_draws: int
    sample_count: int
    targets_bps: tuple[int, ...]
    benchmarks: Optional[tuple[str, ...]]
    config_sha: str

    @property
    def n_assets(self) -> int:
        return self.corpus.n_assets


def _field_error(path: str, message: str) -> ConfigError:
    return ConfigError(f"config field '{path}': {message}")


def load_config(path: str | Path, seed_override: Optional[int] = None,
                out_override: Optional[str] = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    def get(name, default=None, required=False, kind=None):
        if name not in raw:
            if required:
                raise _field_error(name, "missing")
            return default
        value = raw[name]
        if kind is not None and not isinstance(value, kind):
            raise _field_error(name, f"expected {kind.__name__}, got {type(value).__name__}")
        return value

    out_dir = Path(out_override or get("out_dir", required=True, kind=str))
    master_seed = int(seed_override if seed_override is not None
                      else get("master_seed", 0, kind=int))

    corpus_raw = get("corpus", {}, kind=dict)
    try:
        for tuple_key in ("intra_block_corr", "market_loading", "vol_range",
                          "bond_yield_range", "fx_yield_range", "regime_breaks"):
            if tuple_key in corpus_raw and corpus_raw[tuple_key] is not None:
                corpus_raw[tuple_key] = tuple(corpus_raw[tuple_key])
        corpus = market.SynthCorpusConfig(**corpus_raw)
    except (TypeError, market.MarketDataError) as exc:
        raise _field_error("corpus", str(exc)) from exc

    gan = get("gan", {}, kind=dict)
    ae = get("ae", {}, kind=dict)
    for key in ("gen_channels", "upsample_factors", "critic_channels"):
        if key in gan:
            gan[key] = tuple(gan[key])
    for key in ("enc_channels", "head_upsample"):
        if key in ae:
            ae[key] = tuple(ae[key])

    targets = get("targets_bps", list(range(20, 101, 10)), kind=list)
    if not targets or any(not isinstance(t, int) or t < 0 for t in targets):
        raise _field_error("targets_bps", "must be a list of non-negative integers")

    benchmarks = get("benchmarks")
    if benchmarks is not None:
        if not isinstance(benchmarks, list) or not all(isinstance(b, str) for b in benchmarks):
            raise _field_error("benchmarks", "must be a list of asset ids")
        benchmarks = tuple(benchmarks)

    train_end = get("train_end", kind=str)
    input_csv = get("input_csv", kind=str)

    sha = hashlib.sha256(json.dumps(raw, sort_keys=True).encode("utf-8")).hexdigest()
    return RunConfig(
        out_dir=out_dir,
        master_seed=master_seed,
        input_csv=Path(input_csv) if input_csv else None,
        train_end=train_end,
        corpus=corpus,
        gan=gan,
        ae=ae,
        mv_draws=int(get("mv_draws", 10, kind=int)),
        sample_count=int(get("sample_count", 4000, kind=int)),
        targets_bps=tuple(targets),
        benchmarks=benchmarks,
        config_sha=sha,
    )


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing upstream artifact for {what}: {path}")
    return path


def write_manifest(cfg: RunConfig, command: str, outputs: list[str],
                   seeds: dict[str, int]) -> None:
    manifest = {
        "command": command,
        "config_sha256": cfg.config_sha,
        "master_seed": cfg.master_seed,
        "stage_seeds": seeds,
        "outputs": outputs,
        "versions": {
            "fixsynth": __version__,
            "numpy": np.__version__,
        },
    }
    path = cfg.out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# stage implementations
# ---------------------------------------------------------------------------

def _split_panel(cfg: RunConfig, panel: market.ReturnPanel):
    if cfg.train_end is None:
        raise ConfigError("config field 'train_end': required to split train/test")
    import datetime as dt
    try:
        train_end = dt.date.fromisoformat(cfg.train_end)
    except ValueError as exc:
        raise _field_error("train_end", f"bad ISO date: {cfg.train_end!r}") from exc
    train = panel.slice_dates(end=train_end)
    test = panel.slice_dates(start=train_end + dt.timedelta(days=1))
    if not test.dates:
        raise ConfigError("test period is empty; move train_end earlier")
    return train, test


def cmd_synth_corpus(cfg: RunConfig) -> list[str]:
    seed = stage_seed(cfg.master_seed, "synth-corpus")
    panel = market.synth_corpus(cfg.corpus, seed=seed)
    out = cfg.out_dir / PANEL_CSV
    market.write_panel_csv(out, panel)
    log.info("synth corpus: %d weeks x %d assets -> %s",
             panel.n_weeks, panel.n_assets, out)
    write_manifest(cfg, "synth-corpus", [str(out)], {"synth-corpus": seed})
    return [str(out)]


def cmd_ingest(cfg: RunConfig) -> list[str]:
    src = cfg.input_csv if cfg.input_csv is not None else cfg.out_dir / PANEL_CSV
    _require(Path(src), "ingest")
    panel = market.ingest_returns(src)
    train_panel, test_panel = _split_panel(cfg, panel)
    snaps = market.build_snapshots(train_panel)
    snap_path = cfg.out_dir / TRAIN_SNAPSHOTS
    market.save_snapshots(snap_path, snaps)
    test_path = cfg.out_dir / TEST_PANEL_CSV
    market.write_panel_csv(test_path, test_panel)
    log.info("ingest: %d train snapshots, %d test weeks",
             len(snaps), test_panel.n_weeks)
    write_manifest(cfg, "ingest", [str(snap_path), str(test_path)], {})
    return [str(snap_path), str(test_path)]


def cmd_train_gan(cfg: RunConfig) -> list[str]:
    snaps = market.load_snapshots(_require(cfg.out_dir / TRAIN_SNAPSHOTS, "train-gan"))
    seed = stage_seed(cfg.master_seed, "train-gan")
    gan_kwargs = dict(cfg.gan)
    variant = gan_kwargs.pop("variant", "WGAN")
    if variant not in corrgan.VARIANTS:
        raise _field_error("gan.variant", f"must be one of {corrgan.VARIANTS}")
    factory = corrgan.GanConfig.wgan if variant == "WGAN" else corrgan.GanConfig.dcgan
    try:
        gan_cfg = factory(n=cfg.n_assets, seed=seed, **gan_kwargs)
    except (TypeError, corrgan.GanError) as exc:
        raise _field_error("gan", str(exc)) from exc
    gan = corrgan.train(snaps, gan_cfg)
    out = cfg.out_dir / GAN_WEIGHTS
    corrgan.save_gan(out, gan)
    log.info("train-gan: %s %d steps -> %s", variant, gan_cfg.steps, out)
    if gan.history is not None and gan.history.mode_collapse:
        log.warning("mode-collapse heuristic fired at step %s", gan.history.collapse_step)
    write_manifest(cfg, "train-gan", [str(out)], {"train-gan": seed})
    return [str(out)]


def cmd_sample(cfg: RunConfig) -> list[str]:
    gan = corrgan.load_gan(_require(cfg.out_dir / GAN_WEIGHTS, "sample"))
    seed = stage_seed(cfg.master_seed, "sample")
    mats = corrgan.sample(gan, cfg.sample_count, seed=seed)
    out = cfg.out_dir / SAMPLED_MATRICES
    market.save_matrices(out, mats)
    log.info("sample: %d matrices -> %s", len(mats), out)
    write_manifest(cfg, "sample", [str(out)], {"sample": seed})
    return [str(out)]


def cmd_train_ae(cfg: RunConfig) -> list[str]:
    snaps = market.load_snapshots(_require(cfg.out_dir / TRAIN_SNAPSHOTS, "train-ae"))
    seed = stage_seed(cfg.master_seed, "train-ae")
    try:
        ae_cfg = autoencoder.AeConfig(n=cfg.n_assets, seed=seed, **cfg.ae)
    except (TypeError, autoencoder.AutoencoderError) as exc:
        raise _field_error("ae", str(exc)) from exc
    model = autoencoder.train(snaps, ae_cfg)
    out = cfg.out_dir / AE_WEIGHTS
    autoencoder.save_ae(out, model)
    log.info("train-ae: %d steps -> %s (val loss %s)",
             ae_cfg.steps, out,
             None if model.history is None else model.history.val_loss_total)
    write_manifest(cfg, "train-ae", [str(out)], {"train-ae": seed})
    return [str(out)]


def cmd_generate_dataset(cfg: RunConfig) -> list[str]:
    mats = market.load_matrices(_require(cfg.out_dir / SAMPLED_MATRICES,
                                         "generate-dataset"))
    model = autoencoder.load_ae(_require(cfg.out_dir / AE_WEIGHTS, "generate-dataset"))
    snaps = autoencoder.synthetic_snapshots(model, mats)
    out = cfg.out_dir / SYNTH_SNAPSHOTS
    market.save_snapshots(out, snaps)
    log.info("generate-dataset: %d synthetic snapshots -> %s", len(snaps), out)
    write_manifest(cfg, "generate-dataset", [str(out)], {})
    return [str(out)]


def cmd_metrics(cfg: RunConfig) -> list[str]:
    snaps = market.load_snapshots(_require(cfg.out_dir / TRAIN_SNAPSHOTS, "metrics"))
    summaries = {"corpus": metrics.summarize([s.corr for s in snaps])}
    sampled = cfg.out_dir / SAMPLED_MATRICES
    if sampled.exists():
        summaries["generated"] = metrics.summarize(market.load_matrices(sampled))
    out = cfg.out_dir / METRICS_CSV
    metrics.write_metric_table(out, summaries)
    log.info("metrics: %s datasets -> %s", list(summaries), out)
    write_manifest(cfg, "metrics", [str(out)], {})
    return [str(out)]


def cmd_backtest(cfg: RunConfig) -> list[str]:
    train_snaps = market.load_snapshots(_require(cfg.out_dir / TRAIN_SNAPSHOTS,
                                                 "backtest"))
    synth_snaps = market.load_snapshots(_require(cfg.out_dir / SYNTH_SNAPSHOTS,
                                                 "backtest"))
    test_panel = market.ingest_returns(_require(cfg.out_dir / TEST_PANEL_CSV,
                                                "backtest"))
    seed = stage_seed(cfg.master_seed, "backtest-mv")
    results = run_grid(train_snaps, synth_snaps, test_panel,
                       benchmarks=cfg.benchmarks,
                       targets_bps=cfg.targets_bps,
                       mv_cfg=MvConfig(draws=cfg.mv_draws, seed=seed),
                       bounds=Bounds())
    rep = report(results)
    outputs = []
    for name, writer in ((TABLE4_CSV, lambda p: write_table4_csv(p, rep)),
                         (EXPERIMENTS_JSONL, lambda p: write_experiments_jsonl(p, results)),
                         (SUMMARY_TXT, lambda p: write_summary_txt(p, rep, results))):
        path = cfg.out_dir / name
        writer(path)
        outputs.append(str(path))
    log.info("backtest: %d cells -> %s", len(results), outputs[0])
    write_manifest(cfg, "backtest", outputs, {"backtest-mv": seed})
    return outputs


def cmd_report(cfg: RunConfig) -> list[str]:
    results = load_experiments_jsonl(_require(cfg.out_dir / EXPERIMENTS_JSONL,
                                              "report"))
    rep = report(results)
    outputs = []
    for name, writer in ((TABLE4_CSV, lambda p: write_table4_csv(p, rep)),
                         (SUMMARY_TXT, lambda p: write_summary_txt(p, rep, results))):
        path = cfg.out_dir / name
        writer(path)
        outputs.append(str(path))
    write_manifest(cfg, "report", outputs, {})
    return outputs


COMMANDS = {
    "ingest": cmd_ingest,
    "synth-corpus": cmd_synth_corpus,
    "train-gan": cmd_train_gan,
    "sample": cmd_sample,
    "train-ae": cmd_train_ae,
    "generate-dataset": cmd_generate_dataset,
    "metrics": cmd_metrics,
    "backtest": cmd_backtest,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fixsynth",
        description="Synthetic fixed-income datasets and tracking-error backtests.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON run config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the master seed")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker threads for grid cells (reserved; cells "
                             "are deterministic regardless)")
    parser.add_argument("--out", default=None, help="override the output directory")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    level = os.environ.get("FIXSYNTH_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed,
                          out_override=args.out)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("runtime failure: %s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
