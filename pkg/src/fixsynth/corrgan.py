"""Correlation-matrix GANs: a DCGAN baseline and the enhanced Wasserstein variant.

The Wasserstein generator avoids transposed convolutions (the source of the
checkerboard artifact on correlation "images") in favor of nearest-neighbor
upsampling followed by ordinary convolutions, and its critic trains with
weight clipping to keep the score function Lipschitz.  The DCGAN baseline
keeps transposed-convolution blocks and a cross-entropy objective so the two
variants can be compared under matched budgets.

Raw generator output lives in (-1, 1) via tanh.  Sampling symmetrizes,
resets the diagonal, and projects to the nearest valid correlation matrix;
`raw_diagonal_mean` exposes the pre-projection diagonal as a model-quality
probe (a well-trained generator pushes it close to 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import engine as E
from .market import (
    CorrelationMatrix,
    MarketSnapshot,
    ProjectionError,
    default_asset_ids,
    nearest_correlation,
)


class GanError(Exception):
    pass


class TrainingError(GanError):
    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


VARIANTS = ("WGAN", "DCGAN")


@dataclass(frozen=True)
class GanConfig:
    """Architecture and schedule for one GAN variant.

    The generator grows a `seed_size` map to `n` through upsample(+conv)
    blocks (WGAN) or transposed-conv blocks (DCGAN); `gen_channels` lists the
    channel counts from the seed map through each block, so it has
    ``len(upsample_factors) + 1`` entries.  `weight_clip` is the Lipschitz
    mechanism: every critic parameter is clamped to [-c, c] after each critic
    step (None disables clipping, the DCGAN setting).
    """

    n: int = 16
    latent_dim: int = 32
    variant: str = "WGAN"
    weight_clip: Optional[float] = 0.05
    seed_size: int = 4
    gen_channels: tuple[int, ...] = (20, 10, 6)
    upsample_factors: tuple[int, ...] = (2, 2)
    critic_channels: tuple[int, ...] = (12, 24)
    critic_steps: int = 5
    batch_size: int = 32
    lr_generator: float = 5e-5
    lr_critic: float = 5e-5
    beta1: float = 0.0
    beta2: float = 0.9
    steps: int = 1500
    leaky_slope: float = 0.2
    init_std: float = 0.02
    collapse_spread: Optional[float] = None    # default 0.01 * n at train time
    collapse_patience: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise GanError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if len(self.gen_channels) != len(self.upsample_factors) + 1:
            raise GanError("gen_channels must have len(upsample_factors) + 1 entries")
        size = self.seed_size
        for f in self.upsample_factors:
            size *= f
        if size != self.n:
            raise GanError(
                f"generator spatial bookkeeping: seed {self.seed_size} through "
                f"factors {self.upsample_factors} gives {size}, not n={self.n}")
        size = self.n
        for _ in self.critic_channels:
            if size % 2 != 0:
                raise GanError(
                    f"critic halving does not divide n={self.n} "
                    f"({len(self.critic_channels)} stride-2 blocks)")
            size //= 2
        if self.weight_clip is not None and self.weight_clip <= 0:
            raise GanError("weight_clip bound must be > 0")
        if self.critic_steps < 1:
            raise GanError("critic_steps must be >= 1 (zero critic steps configured)")
        if self.batch_size < 2:
            raise GanError("batch_size must be >= 2")

    @property
    def critic_flat(self) -> int:
        size = self.n // (2 ** len(self.critic_channels))
        return self.critic_channels[-1] * size * size

    @classmethod
    def wgan(cls, n: int = 16, seed: int = 0, **kw) -> "GanConfig":
        """Weight-clipped Wasserstein variant; lr tuned on the desk corpus
        (the literature's 5e-5 stalls at this scale within CPU budgets)."""
        return cls(n=n, variant="WGAN", weight_clip=kw.pop("weight_clip", 0.05),
                   lr_generator=kw.pop("lr_generator", 3e-4),
                   lr_critic=kw.pop("lr_critic", 3e-4),
                   beta1=kw.pop("beta1", 0.0), beta2=kw.pop("beta2", 0.9),
                   seed=seed, **kw)

    @classmethod
    def dcgan(cls, n: int = 16, seed: int = 0, **kw) -> "GanConfig":
        """Transposed-convolution baseline with the classic optimizer recipe."""
        return cls(n=n, variant="DCGAN", weight_clip=None,
                   lr_generator=kw.pop("lr_generator", 2e-4),
                   lr_critic=kw.pop("lr_critic", 2e-4),
                   beta1=kw.pop("beta1", 0.5), beta2=kw.pop("beta2", 0.999),
                   seed=seed, **kw)


@dataclass
class TrainingHistory:
    critic_loss: np.ndarray
    gen_loss: np.ndarray
    critic_gap: np.ndarray          # mean real score - mean fake score
    gen_spread: np.ndarray          # mean pairwise Frobenius distance in the batch
    diag_mean: np.ndarray           # mean diagonal of the generated batch
    mode_collapse: bool = False
    collapse_step: Optional[int] = None

    def __len__(self) -> int:
        return len(self.critic_loss)


@dataclass
class TrainedGan:
    config: GanConfig
    gen_params: dict[str, E.Tensor]
    critic_params: dict[str, E.Tensor]
    asset_ids: tuple[str, ...]
    history: Optional[TrainingHistory] = None


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

def init_generator_params(cfg: GanConfig, rng: np.random.Generator) -> dict[str, E.Tensor]:
    ch = cfg.gen_channels

    def p(arr):
        return E.Tensor(arr, requires_grad=True)

    params = {
        "fc.w": p(rng.normal(0.0, cfg.init_std, (cfg.latent_dim, ch[0] * cfg.seed_size ** 2))),
        "fc.b": p(np.zeros(ch[0] * cfg.seed_size ** 2)),
    }
    for i in range(len(cfg.upsample_factors)):
        if cfg.variant == "WGAN":
            params[f"block{i}.w"] = p(rng.normal(0.0, cfg.init_std, (ch[i + 1], ch[i], 3, 3)))
        else:
            # k=5 transposed blocks: kernel not divisible by the stride, the
            # geometry that produces the checkerboard artifact
            params[f"block{i}.w"] = p(rng.normal(0.0, cfg.init_std, (ch[i], ch[i + 1], 5, 5)))
        params[f"block{i}.b"] = p(np.zeros(ch[i + 1]))
    params["head.w"] = p(rng.normal(0.0, cfg.init_std, (1, ch[-1], 3, 3)))
    params["head.b"] = p(np.zeros(1))
    return params


def init_critic_params(cfg: GanConfig, rng: np.random.Generator) -> dict[str, E.Tensor]:
    def p(arr):
        return E.Tensor(arr, requires_grad=True)

    params = {}
    ch_in = 1
    for i, ch_out in enumerate(cfg.critic_channels):
        params[f"c{i}.w"] = p(rng.normal(0.0, cfg.init_std, (ch_out, ch_in, 4, 4)))
        params[f"c{i}.b"] = p(np.zeros(ch_out))
        ch_in = ch_out
    params["out.w"] = p(rng.normal(0.0, cfg.init_std, (cfg.critic_flat, 1)))
    params["out.b"] = p(np.zeros(1))
    return params


def build_generator(cfg: GanConfig, rng: Optional[np.random.Generator] = None):
    """Validated parameter dict for the configured generator variant."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    return init_generator_params(cfg, rng)


def generator_forward(params: dict[str, E.Tensor], z: E.Tensor, cfg: GanConfig) -> E.Tensor:
    """latent (B, latent_dim) -> (B, 1, n, n) map in (-1, 1)."""
    batch = z.shape[0]
    h = E.linear(z, params["fc.w"], params["fc.b"])
    h = E.reshape(h, (batch, cfg.gen_channels[0], cfg.seed_size, cfg.seed_size))
    for i, factor in enumerate(cfg.upsample_factors):
        if cfg.variant == "WGAN":
            h = E.upsample2d_nearest(h, factor)
            h = E.conv2d(h, params[f"block{i}.w"], params[f"block{i}.b"], stride=1, padding=1)
        else:
            h = E.transposed_conv2d(h, params[f"block{i}.w"], params[f"block{i}.b"],
                                    stride=factor, padding=2,
                                    output_padding=factor - 1)
        h = E.leaky_relu(h, cfg.leaky_slope)
    h = E.conv2d(h, params["head.w"], params["head.b"], stride=1, padding=1)
    return E.tanh(h)


def critic_forward(params: dict[str, E.Tensor], x: E.Tensor, cfg: GanConfig) -> E.Tensor:
    """(B, 1, n, n) -> (B, 1) raw scores (no terminal squashing)."""
    h = x
    for i in range(len(cfg.critic_channels)):
        h = E.conv2d(h, params[f"c{i}.w"], params[f"c{i}.b"], stride=2, padding=1)
        h = E.leaky_relu(h, cfg.leaky_slope)
    h = E.reshape(h, (h.shape[0], cfg.critic_flat))
    return E.linear(h, params["out.w"], params["out.b"])


def discriminator_prob(gan: "TrainedGan", x: np.ndarray) -> np.ndarray:
    """DCGAN discriminator probability in (0, 1): sigma(s) = (1+tanh(s/2))/2."""
    scores = critic_forward(gan.critic_params, E.Tensor(x), gan.config).data
    return 0.5 * (1.0 + np.tanh(0.5 * scores))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _extract_matrices(data: Sequence, n: int) -> tuple[np.ndarray, tuple[str, ...]]:
    mats = []
    ids: Optional[tuple[str, ...]] = None
    for item in data:
        if isinstance(item, MarketSnapshot):
            cm = item.corr
        elif isinstance(item, CorrelationMatrix):
            cm = item
        else:
            arr = np.asarray(item, dtype=np.float64)
            if arr.shape != (n, n):
                raise GanError(f"matrix shape {arr.shape} does not match n={n}")
            mats.append(arr)
            continue
        if cm.values.shape != (n, n):
            raise GanError(f"matrix shape {cm.values.shape} does not match n={n}")
        if ids is None:
            ids = cm.asset_ids
        elif ids != cm.asset_ids:
            raise GanError("training matrices must share one fixed asset order")
        mats.append(cm.values)
    if ids is None:
        ids = default_asset_ids(n)
    return np.stack(mats)[:, None, :, :], ids


def _batch_spread(fake: np.ndarray) -> float:
    """Mean pairwise Frobenius distance within a generated batch."""
    flat = fake.reshape(fake.shape[0], -1)
    b = flat.shape[0]
    var = flat.var(axis=0, ddof=0).sum()
    mean_sq = 2.0 * b / (b - 1) * var
    return math.sqrt(max(mean_sq, 0.0))


def _clip_params(params: dict[str, E.Tensor], bound: float) -> dict[str, E.Tensor]:
    return {name: E.Tensor(np.clip(t.data, -bound, bound), requires_grad=True)
            for name, t in params.items()}


def _grads_for(params: dict[str, E.Tensor], grads: dict) -> dict[str, np.ndarray]:
    return {name: grads[t] for name, t in params.items()}


def train(data: Sequence, cfg: GanConfig) -> TrainedGan:
    """Alternating critic/generator optimization; reproducible from cfg.seed.

    `data` is a sequence of MarketSnapshot, CorrelationMatrix, or raw (n, n)
    arrays in a consistent asset order.  History records per-generator-step
    losses, the critic score gap, and the generated-batch spread used by the
    mode-collapse heuristic.
    """
    X, asset_ids = _extract_matrices(data, cfg.n)
    if X.shape[0] < cfg.batch_size:
        raise GanError(
            f"need at least batch_size={cfg.batch_size} matrices, got {X.shape[0]}")

    rng = np.random.default_rng(cfg.seed)
    gen_params = init_generator_params(cfg, rng)
    critic_params = init_critic_params(cfg, rng)
    opt_g = E.AdamState(lr=cfg.lr_generator, beta1=cfg.beta1, beta2=cfg.beta2)
    opt_c = E.AdamState(lr=cfg.lr_critic, beta1=cfg.beta1, beta2=cfg.beta2)

    hist = TrainingHistory(
        critic_loss=np.zeros(cfg.steps),
        gen_loss=np.zeros(cfg.steps),
        critic_gap=np.zeros(cfg.steps),
        gen_spread=np.zeros(cfg.steps),
        diag_mean=np.zeros(cfg.steps),
    )
    spread_threshold = cfg.collapse_spread if cfg.collapse_spread is not None else 0.01 * cfg.n
    collapse_run = 0
    wgan = cfg.variant == "WGAN"

    for step in range(cfg.steps):
        for _ in range(cfg.critic_steps):
            idx = rng.integers(0, X.shape[0], cfg.batch_size)
            real = X[idx]
            z = rng.standard_normal((cfg.batch_size, cfg.latent_dim))
            fake = generator_forward(gen_params, E.Tensor(z), cfg).data
            with E.Tape() as tape:
                s_real = critic_forward(critic_params, E.Tensor(real), cfg)
                s_fake = critic_forward(critic_params, E.Tensor(fake), cfg)
                if wgan:
                    loss_c = E.sub(E.mean_all(s_fake), E.mean_all(s_real))
                else:
                    loss_c = E.add(E.mean_all(E.softplus(E.neg(s_real))),
                                   E.mean_all(E.softplus(s_fake)))
            loss_c_val = loss_c.item()
            if not math.isfinite(loss_c_val):
                raise TrainingError(f"non-finite critic loss at step {step}", step)
            grads = E.backward(tape, loss_c)
            critic_params = E.adam_step(opt_c, critic_params,
                                        _grads_for(critic_params, grads))
            if cfg.weight_clip is not None:
                critic_params = _clip_params(critic_params, cfg.weight_clip)
            gap = float(s_real.data.mean() - s_fake.data.mean())

        z = rng.standard_normal((cfg.batch_size, cfg.latent_dim))
        with E.Tape() as tape:
            fake_t = generator_forward(gen_params, E.Tensor(z), cfg)
            s_fake = critic_forward(critic_params, fake_t, cfg)
            if wgan:
                loss_g = E.neg(E.mean_all(s_fake))
            else:
                loss_g = E.mean_all(E.softplus(E.neg(s_fake)))
        loss_g_val = loss_g.item()
        if not math.isfinite(loss_g_val):
            raise TrainingError(f"non-finite generator loss at step {step}", step)
        grads = E.backward(tape, loss_g)
        gen_params = E.adam_step(opt_g, gen_params, _grads_for(gen_params, grads))

        spread = _batch_spread(fake_t.data)
        hist.critic_loss[step] = loss_c_val
        hist.gen_loss[step] = loss_g_val
        hist.critic_gap[step] = gap
        hist.gen_spread[step] = spread
        hist.diag_mean[step] = float(
            np.trace(fake_t.data[:, 0], axis1=1, axis2=2).mean() / cfg.n)
        if spread < spread_threshold:
            collapse_run += 1
            if collapse_run >= cfg.collapse_patience and not hist.mode_collapse:
                hist.mode_collapse = True
                hist.collapse_step = step
        else:
            collapse_run = 0

    return TrainedGan(config=cfg, gen_params=gen_params,
                      critic_params=critic_params, asset_ids=asset_ids,
                      history=hist)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _raw_batches(gan: TrainedGan, count: int, seed: int, batch: int = 256):
    rng = np.random.default_rng(seed)
    done = 0
    while done < count:
        b = min(batch, count - done)
        z = rng.standard_normal((b, gan.config.latent_dim))
        out = generator_forward(gan.gen_params, E.Tensor(z), gan.config).data[:, 0]
        yield 0.5 * (out + np.transpose(out, (0, 2, 1)))   # symmetrized
        done += b


def raw_diagonal_mean(gan: TrainedGan, count: int, seed: int = 0) -> float:
    """Mean diagonal of raw (symmetrized, pre-projection) generator output."""
    if count < 1:
        raise GanError("raw_diagonal_mean needs count >= 1")
    total, seen = 0.0, 0
    for raw in _raw_batches(gan, count, seed):
        total += np.trace(raw, axis1=1, axis2=2).sum()
        seen += raw.shape[0]
    return total / (seen * gan.config.n)


def sample(gan: TrainedGan, count: int, seed: int = 0,
           max_failure_share: float = 0.01) -> list[CorrelationMatrix]:
    """Draw `count` valid correlation matrices in the training asset order.

    Raw outputs are symmetrized, get a unit diagonal, and are projected via
    nearest_correlation.  Individual projection failures are skipped; more
    than `max_failure_share` of them is an error.
    """
    if count == 0:
        return []
    out: list[CorrelationMatrix] = []
    failures = 0
    for raw in _raw_batches(gan, count, seed):
        for mat in raw:
            np.fill_diagonal(mat, 1.0)
            try:
                out.append(nearest_correlation(mat, asset_ids=gan.asset_ids))
            except ProjectionError:
                failures += 1
    if failures > max_failure_share * count:
        raise GanError(
            f"projection failed for {failures}/{count} samples "
            f"(> {max_failure_share:.0%} allowed)")
    return out


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_gan(path: str | Path, gan: TrainedGan) -> None:
    params = {f"gen.{k}": v for k, v in gan.gen_params.items()}
    params.update({f"critic.{k}": v for k, v in gan.critic_params.items()})
    graph = {
        "kind": "corrgan",
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in vars(gan.config).items()},
        "asset_ids": list(gan.asset_ids),
    }
    E.save_params(path, params, graph=graph, seed=gan.config.seed)


def load_gan(path: str | Path) -> TrainedGan:
    header, params = E.load_params(path)
    graph = header.get("graph", {})
    if graph.get("kind") != "corrgan":
        raise GanError(f"{path} is not a corrgan weight file")
    raw_cfg = dict(graph["config"])
    for key in ("gen_channels", "upsample_factors", "critic_channels"):
        raw_cfg[key] = tuple(raw_cfg[key])
    cfg = GanConfig(**raw_cfg)
    gen = {k[len("gen."):]: v for k, v in params.items() if k.startswith("gen.")}
    critic = {k[len("critic."):]: v for k, v in params.items() if k.startswith("critic.")}
    return TrainedGan(config=cfg, gen_params=gen, critic_params=critic,
                      asset_ids=tuple(graph["asset_ids"]), history=None)
