"""Simulation sets for the portfolio optimizer: FR Sims and MV Sims.

FR Sims stack snapshots' realized 4-week forward-return vectors directly,
keeping whatever skew and fat tails the data carries.  MV Sims draw several
zero-mean multivariate-normal return vectors per snapshot from the
covariance implied by its correlation matrix and volatility vector, scaled
to the one-month horizon.  Both carry the dataset's mean expected-return
vector, which the optimizer's return constraint consumes.

MV draws use a counter-based generator keyed by (seed, snapshot index, draw
index), so parallel generation over snapshots cannot change the result.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .market import MarketSnapshot


class SimulationError(Exception):
    pass


LABELS = ("Empirical", "Synthetic", "Combined")
KINDS = ("FR", "MV")

MONTH_HORIZON = 1.0 / 12.0


@dataclass(frozen=True)
class MvConfig:
    draws: int = 10                  # simulations per covariance matrix
    horizon: float = MONTH_HORIZON   # years; annualized covariance is scaled by this
    seed: int = 0

    def __post_init__(self):
        if self.draws < 1:
            raise SimulationError("draws must be >= 1")
        if self.horizon <= 0:
            raise SimulationError("horizon must be > 0")


@dataclass(frozen=True)
class SimulationSet:
    """n_sims x m matrix of 1-month returns plus mean expected returns."""

    returns: np.ndarray
    mu: np.ndarray
    asset_ids: tuple[str, ...]
    label: str
    kind: str

    def __post_init__(self):
        r = np.asarray(self.returns, dtype=np.float64)
        m = np.asarray(self.mu, dtype=np.float64)
        object.__setattr__(self, "returns", r)
        object.__setattr__(self, "mu", m)
        object.__setattr__(self, "asset_ids", tuple(self.asset_ids))
        if self.label not in LABELS:
            raise SimulationError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.kind not in KINDS:
            raise SimulationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        n_assets = len(self.asset_ids)
        if r.ndim != 2 or r.shape[1] != n_assets:
            raise SimulationError(
                f"returns shape {r.shape} does not match {n_assets} assets")
        if r.shape[0] < 1:
            raise SimulationError("need at least one simulation row")
        if m.shape != (n_assets,):
            raise SimulationError(f"mu shape {m.shape} does not match universe")

    @property
    def n_sims(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return len(self.asset_ids)


def _check_universe(snapshots: Sequence[MarketSnapshot]) -> tuple[str, ...]:
    if not snapshots:
        raise SimulationError("need a non-empty snapshot list")
    ids = snapshots[0].asset_ids
    for s in snapshots[1:]:
        if s.asset_ids != ids:
            raise SimulationError("snapshots must share one asset order")
    return ids


def _mean_mu(snapshots: Sequence[MarketSnapshot]) -> np.ndarray:
    return np.mean([s.expected_returns for s in snapshots], axis=0)


def fr_sims(snapshots: Sequence[MarketSnapshot], label: str) -> SimulationSet:
    """Forward-return rows, one per snapshot."""
    ids = _check_universe(snapshots)
    rows = np.stack([s.forward_returns for s in snapshots])
    return SimulationSet(returns=rows, mu=_mean_mu(snapshots), asset_ids=ids,
                         label=label, kind="FR")


def cholesky_psd(sigma: np.ndarray,
                 jitter_schedule: Optional[Sequence[float]] = None
                 ) -> tuple[np.ndarray, float]:
    """Lower-triangular L with L L^T = sigma + eps*I; eps taken from the
    schedule (relative to trace/n), 0 for positive-definite input."""
    sigma = np.asarray(sigma, dtype=np.float64)
    n = sigma.shape[0]
    if sigma.ndim != 2 or sigma.shape != (n, n):
        raise SimulationError(f"covariance must be square, got {sigma.shape}")
    asym = np.abs(sigma - sigma.T).max() if n else 0.0
    if asym > 1e-10 * max(1.0, np.abs(sigma).max()):
        raise SimulationError(f"covariance is not symmetric (max asymmetry {asym:.3e})")
    if not np.any(sigma):
        return np.zeros_like(sigma), 0.0

    scale = float(np.trace(sigma)) / n
    rels = tuple(jitter_schedule) if jitter_schedule is not None else \
        (0.0, 1e-12, 1e-10, 1e-8, 1e-6)
    eps = 0.0
    for rel in rels:
        eps = rel * scale
        try:
            return np.linalg.cholesky(sigma + eps * np.eye(n)), eps
        except np.linalg.LinAlgError:
            continue
    raise SimulationError(
        f"Cholesky failed through the jitter schedule (final eps {eps:.3e})")


def _philox_rng(seed: int, snap_index: int, draw_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        counter=[np.uint64(draw_index), np.uint64(snap_index), 0, 0],
        key=np.uint64(seed)))


def mv_sims(snapshots: Sequence[MarketSnapshot], cfg: MvConfig,
            label: str) -> SimulationSet:
    """Multivariate-normal draws: `cfg.draws` zero-mean rows per snapshot,
    covariance diag(vol) C diag(vol) scaled by the horizon.

    Row order is (snapshot, draw); draws are keyed by (seed, snapshot index,
    draw index) so results do not depend on processing order.
    """
    ids = _check_universe(snapshots)
    m = len(ids)
    rows = np.empty((len(snapshots) * cfg.draws, m))
    for k, snap in enumerate(snapshots):
        sigma = (np.outer(snap.volatilities, snap.volatilities)
                 * snap.corr.values) * cfg.horizon
        try:
            L, _ = cholesky_psd(sigma)
        except SimulationError as exc:
            tag = snap.date.isoformat() if snap.date is not None else f"index {k}"
            raise SimulationError(f"snapshot {tag}: {exc}") from exc
        for j in range(cfg.draws):
            z = _philox_rng(cfg.seed, k, j).standard_normal(m)
            rows[k * cfg.draws + j] = L @ z
    return SimulationSet(returns=rows, mu=_mean_mu(snapshots), asset_ids=ids,
                         label=label, kind="MV")


def combine(sets: Sequence[SimulationSet]) -> SimulationSet:
    """Row-concatenate sets of one kind over one universe; mu is the
    row-count-weighted mean; the result is labeled Combined."""
    if not sets:
        raise SimulationError("combine needs at least one set")
    first = sets[0]
    for s in sets[1:]:
        if s.asset_ids != first.asset_ids:
            raise SimulationError("cannot combine sets over different universes")
        if s.kind != first.kind:
            raise SimulationError(
                f"cannot combine {first.kind} with {s.kind} simulations")
    rows = np.vstack([s.returns for s in sets])
    weights = np.array([s.n_sims for s in sets], dtype=np.float64)
    mu = np.average([s.mu for s in sets], axis=0, weights=weights)
    return SimulationSet(returns=rows, mu=mu, asset_ids=first.asset_ids,
                         label="Combined", kind=first.kind)


# ---------------------------------------------------------------------------
# binary serialization: JSON header line + row-major float64 payload
# ---------------------------------------------------------------------------

def save_simset(path: str | Path, s: SimulationSet) -> None:
    header = {
        "magic": "fixsynth-simset",
        "n_sims": s.n_sims,
        "n_assets": s.n_assets,
        "label": s.label,
        "kind": s.kind,
        "asset_ids": list(s.asset_ids),
        "mu": s.mu.tolist(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(s.returns, dtype="<f8").tobytes())


def load_simset(path: str | Path) -> SimulationSet:
    path = Path(path)
    if not path.exists():
        raise SimulationError(f"simulation file not found: {path}")
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("magic") != "fixsynth-simset":
            raise SimulationError(f"{path}: not a simulation-set file")
        n_sims, m = header["n_sims"], header["n_assets"]
        raw = fh.read(n_sims * m * 8)
        if len(raw) != n_sims * m * 8:
            raise SimulationError(f"{path}: truncated payload")
        rows = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(n_sims, m)
    return SimulationSet(returns=rows, mu=np.asarray(header["mu"]),
                         asset_ids=tuple(header["asset_ids"]),
                         label=header["label"], kind=header["kind"])
