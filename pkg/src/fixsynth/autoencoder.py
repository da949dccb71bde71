"""Encoder-decoder translation of a correlation matrix into asset attributes.

The encoder deconstructs the n x n matrix with strided 2D convolutions
(LeakyReLU + dropout) and compresses to a latent vector; three parallel
decoder heads (linear, 1D convolutions, nearest-neighbor upsampling) emit the
volatility, expected-return, and forward-return vectors in the input asset
order.  The trained model is a deterministic translator: all diversity in
its output comes from the variety of input matrices.

Targets are standardized before the triple-MSE loss so no head dominates:
volatilities are scaled (not centered, so the softplus head keeps them
strictly positive), the other two components are z-scored.  The scaling
statistics ride along with the weights and are inverted at generation time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import engine as E
from .market import CorrelationMatrix, MarketSnapshot


class AutoencoderError(Exception):
    pass


class AeTrainingError(AutoencoderError):
    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


HEADS = ("vol", "er", "fr")


@dataclass(frozen=True)
class AeConfig:
    n: int = 16
    enc_channels: tuple[int, ...] = (8, 16)      # stride-2 conv blocks
    dropout_rate: float = 0.1
    latent_dim: int = 32
    head_channels: int = 8
    head_upsample: tuple[int, ...] = (2, 2)
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    steps: int = 1500
    leaky_slope: float = 0.2
    init_std: float = 0.05
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        size = self.n
        for _ in self.enc_channels:
            if size % 2 != 0:
                raise AutoencoderError(
                    f"encoder halving does not divide n={self.n}")
            size //= 2
        prod = 1
        for f in self.head_upsample:
            prod *= f
        if self.n % prod != 0:
            raise AutoencoderError(
                f"head upsample factors {self.head_upsample} do not divide n={self.n}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise AutoencoderError("dropout_rate must be in [0, 1)")

    @property
    def enc_flat(self) -> int:
        size = self.n // (2 ** len(self.enc_channels))
        return self.enc_channels[-1] * size * size

    @property
    def head_seed_len(self) -> int:
        prod = 1
        for f in self.head_upsample:
            prod *= f
        return self.n // prod


@dataclass(frozen=True)
class AeStats:
    """Standardization statistics fitted on the training split."""

    vol_scale: float
    er_mean: float
    er_std: float
    fr_mean: float
    fr_std: float


@dataclass(frozen=True)
class AttributeVectors:
    """The three generated attribute vectors, in input asset order."""

    volatilities: np.ndarray
    expected_returns: np.ndarray
    forward_returns: np.ndarray
    asset_ids: tuple[str, ...]

    def __post_init__(self):
        n = len(self.asset_ids)
        for name in ("volatilities", "expected_returns", "forward_returns"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, v)
            if v.shape != (n,):
                raise AutoencoderError(f"{name} must have length {n}")
        if np.any(self.volatilities < 0):
            raise AutoencoderError("volatilities must be >= 0")


@dataclass
class AeHistory:
    loss_vol: np.ndarray
    loss_er: np.ndarray
    loss_fr: np.ndarray
    loss_total: np.ndarray
    val_loss_total: Optional[float] = None

    def __len__(self) -> int:
        return len(self.loss_total)


@dataclass
class TrainedAutoencoder:
    config: AeConfig
    params: dict[str, E.Tensor]
    stats: AeStats
    history: Optional[AeHistory] = None


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

def build(cfg: AeConfig, rng: Optional[np.random.Generator] = None) -> dict[str, E.Tensor]:
    """Initialize encoder + three-head decoder parameters."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)

    def p(arr):
        return E.Tensor(arr, requires_grad=True)

    params: dict[str, E.Tensor] = {}
    ch_in = 1
    for i, ch_out in enumerate(cfg.enc_channels):
        params[f"enc{i}.w"] = p(rng.normal(0.0, cfg.init_std, (ch_out, ch_in, 3, 3)))
        params[f"enc{i}.b"] = p(np.zeros(ch_out))
        ch_in = ch_out
    params["enc_fc.w"] = p(rng.normal(0.0, cfg.init_std, (cfg.enc_flat, cfg.latent_dim)))
    params["enc_fc.b"] = p(np.zeros(cfg.latent_dim))

    ch = cfg.head_channels
    for head in HEADS:
        params[f"{head}_fc.w"] = p(rng.normal(
            0.0, cfg.init_std, (cfg.latent_dim, ch * cfg.head_seed_len)))
        params[f"{head}_fc.b"] = p(np.zeros(ch * cfg.head_seed_len))
        for i in range(len(cfg.head_upsample)):
            params[f"{head}_conv{i}.w"] = p(rng.normal(0.0, cfg.init_std, (ch, ch, 3)))
            params[f"{head}_conv{i}.b"] = p(np.zeros(ch))
        params[f"{head}_out.w"] = p(rng.normal(0.0, cfg.init_std, (1, ch, 3)))
        params[f"{head}_out.b"] = p(np.zeros(1))
    return params


def _encode(params, x: E.Tensor, cfg: AeConfig, training: bool,
            dropout_seed: int) -> E.Tensor:
    h = x
    for i in range(len(cfg.enc_channels)):
        h = E.conv2d(h, params[f"enc{i}.w"], params[f"enc{i}.b"], stride=2, padding=1)
        h = E.leaky_relu(h, cfg.leaky_slope)
        h = E.dropout(h, cfg.dropout_rate, seed=dropout_seed + i, training=training)
    h = E.reshape(h, (h.shape[0], cfg.enc_flat))
    return E.linear(h, params["enc_fc.w"], params["enc_fc.b"])


def _decode_head(params, z: E.Tensor, cfg: AeConfig, head: str) -> E.Tensor:
    batch = z.shape[0]
    h = E.linear(z, params[f"{head}_fc.w"], params[f"{head}_fc.b"])
    h = E.reshape(h, (batch, cfg.head_channels, cfg.head_seed_len))
    for i, factor in enumerate(cfg.head_upsample):
        h = E.conv1d(h, params[f"{head}_conv{i}.w"], params[f"{head}_conv{i}.b"],
                     stride=1, padding=1)
        h = E.leaky_relu(h, cfg.leaky_slope)
        h = E.upsample1d_nearest(h, factor)
    h = E.conv1d(h, params[f"{head}_out.w"], params[f"{head}_out.b"], stride=1, padding=1)
    h = E.reshape(h, (batch, cfg.n))
    if head == "vol":
        h = E.softplus(h)
    return h


def forward(params, x: E.Tensor, cfg: AeConfig, training: bool = False,
            dropout_seed: int = 0) -> dict[str, E.Tensor]:
    """(B, 1, n, n) -> standardized head outputs, each (B, n)."""
    z = _encode(params, x, cfg, training, dropout_seed)
    return {head: _decode_head(params, z, cfg, head) for head in HEADS}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _fit_stats(snaps: Sequence[MarketSnapshot]) -> AeStats:
    vol = np.concatenate([s.volatilities for s in snaps])
    er = np.concatenate([s.expected_returns for s in snaps])
    fr = np.concatenate([s.forward_returns for s in snaps])
    floor = 1e-12
    return AeStats(
        vol_scale=max(float(vol.std(ddof=0)), floor),
        er_mean=float(er.mean()), er_std=max(float(er.std(ddof=0)), floor),
        fr_mean=float(fr.mean()), fr_std=max(float(fr.std(ddof=0)), floor),
    )


def _standardized_targets(snaps, stats: AeStats):
    vol = np.stack([s.volatilities for s in snaps]) / stats.vol_scale
    er = (np.stack([s.expected_returns for s in snaps]) - stats.er_mean) / stats.er_std
    fr = (np.stack([s.forward_returns for s in snaps]) - stats.fr_mean) / stats.fr_std
    return {"vol": vol, "er": er, "fr": fr}


def _component_losses(params, x, targets, cfg, training, dropout_seed):
    preds = forward(params, x, cfg, training=training, dropout_seed=dropout_seed)
    return {head: E.mse_loss(preds[head], E.Tensor(targets[head])) for head in HEADS}


def train(snapshots: Sequence[MarketSnapshot], cfg: AeConfig) -> TrainedAutoencoder:
    """Minimize the sum of the three standardized MSE components.

    The snapshot list is split 90/10 by date order (train first); statistics
    and gradients come from the training split only.
    """
    snaps = list(snapshots)
    if len(snaps) < cfg.batch_size:
        raise AutoencoderError(
            f"need at least batch_size={cfg.batch_size} snapshots, got {len(snaps)}")
    for s in snaps:
        if s.corr.n != cfg.n:
            raise AutoencoderError(f"snapshot has n={s.corr.n}, config n={cfg.n}")

    n_val = int(len(snaps) * cfg.val_fraction)
    train_snaps = snaps[:len(snaps) - n_val] if n_val else snaps
    val_snaps = snaps[len(snaps) - n_val:] if n_val else []

    stats = _fit_stats(train_snaps)
    X = np.stack([s.corr.values for s in train_snaps])[:, None, :, :]
    targets = _standardized_targets(train_snaps, stats)

    rng = np.random.default_rng(cfg.seed)
    params = build(cfg, rng)
    opt = E.AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    hist = AeHistory(loss_vol=np.zeros(cfg.steps), loss_er=np.zeros(cfg.steps),
                     loss_fr=np.zeros(cfg.steps), loss_total=np.zeros(cfg.steps))

    for step in range(cfg.steps):
        idx = rng.integers(0, X.shape[0], cfg.batch_size)
        batch_targets = {h: targets[h][idx] for h in HEADS}
        drop_seed = (cfg.seed * 1_000_003 + step) * 97
        with E.Tape() as tape:
            losses = _component_losses(params, E.Tensor(X[idx]), batch_targets,
                                       cfg, training=True, dropout_seed=drop_seed)
            total = E.add(E.add(losses["vol"], losses["er"]), losses["fr"])
        vals = {h: losses[h].item() for h in HEADS}
        total_val = total.item()
        if not math.isfinite(total_val):
            raise AeTrainingError(f"non-finite loss at step {step}", step)
        grads = E.backward(tape, total)
        params = E.adam_step(opt, params, {name: grads[t] for name, t in params.items()})
        hist.loss_vol[step] = vals["vol"]
        hist.loss_er[step] = vals["er"]
        hist.loss_fr[step] = vals["fr"]
        hist.loss_total[step] = total_val

    if val_snaps:
        Xv = np.stack([s.corr.values for s in val_snaps])[:, None, :, :]
        targets_v = _standardized_targets(val_snaps, stats)
        losses = _component_losses(params, E.Tensor(Xv), targets_v, cfg,
                                   training=False, dropout_seed=0)
        hist.val_loss_total = float(sum(l.item() for l in losses.values()))

    return TrainedAutoencoder(config=cfg, params=params, stats=stats, history=hist)


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate(model: TrainedAutoencoder, corr: CorrelationMatrix) -> AttributeVectors:
    """Deterministic eval-mode translation of one correlation matrix."""
    cfg = model.config
    if corr.n != cfg.n:
        raise AutoencoderError(f"matrix has n={corr.n}, model expects {cfg.n}")
    x = E.Tensor(corr.values[None, None, :, :])
    preds = forward(model.params, x, cfg, training=False)
    s = model.stats
    return AttributeVectors(
        volatilities=preds["vol"].data[0] * s.vol_scale,
        expected_returns=preds["er"].data[0] * s.er_std + s.er_mean,
        forward_returns=preds["fr"].data[0] * s.fr_std + s.fr_mean,
        asset_ids=corr.asset_ids,
    )


def generate_many(model: TrainedAutoencoder,
                  matrices: Sequence[CorrelationMatrix],
                  batch: int = 256) -> list[AttributeVectors]:
    """Batched generate() over a matrix collection (same output values)."""
    cfg = model.config
    out: list[AttributeVectors] = []
    s = model.stats
    for lo in range(0, len(matrices), batch):
        chunk = matrices[lo:lo + batch]
        for m in chunk:
            if m.n != cfg.n:
                raise AutoencoderError(f"matrix has n={m.n}, model expects {cfg.n}")
        x = E.Tensor(np.stack([m.values for m in chunk])[:, None, :, :])
        preds = forward(model.params, x, cfg, training=False)
        for k, m in enumerate(chunk):
            out.append(AttributeVectors(
                volatilities=preds["vol"].data[k] * s.vol_scale,
                expected_returns=preds["er"].data[k] * s.er_std + s.er_mean,
                forward_returns=preds["fr"].data[k] * s.fr_std + s.fr_mean,
                asset_ids=m.asset_ids,
            ))
    return out


def synthetic_snapshots(model: TrainedAutoencoder,
                        matrices: Sequence[CorrelationMatrix]) -> list[MarketSnapshot]:
    """Pair each sampled matrix with its generated attributes (date=None)."""
    attrs = generate_many(model, matrices)
    return [MarketSnapshot(date=None, corr=m, volatilities=a.volatilities,
                           expected_returns=a.expected_returns,
                           forward_returns=a.forward_returns)
            for m, a in zip(matrices, attrs)]


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_ae(path: str | Path, model: TrainedAutoencoder) -> None:
    graph = {
        "kind": "attr-autoencoder",
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in vars(model.config).items()},
        "stats": vars(model.stats),
    }
    E.save_params(path, model.params, graph=graph, seed=model.config.seed)


def load_ae(path: str | Path) -> TrainedAutoencoder:
    header, params = E.load_params(path)
    graph = header.get("graph", {})
    if graph.get("kind") != "attr-autoencoder":
        raise AutoencoderError(f"{path} is not an autoencoder weight file")
    raw_cfg = dict(graph["config"])
    for key in ("enc_channels", "head_upsample"):
        raw_cfg[key] = tuple(raw_cfg[key])
    cfg = AeConfig(**raw_cfg)
    stats = AeStats(**graph["stats"])
    return TrainedAutoencoder(config=cfg, params=params, stats=stats, history=None)
