"""Market panels, rolling-window snapshots, and the synthetic ground-truth corpus.

A `ReturnPanel` is a weekly grid of total returns and 1-year expected
returns for an ordered universe (bond segment first, then FX).
`build_snapshots` turns it into dated observations: a 52-week correlation
matrix, 52-week annualized volatilities, the expected-return vector at that
date, and the compounded 4-week forward return.  `synth_corpus` fabricates a
panel from a one-factor + block model with scheduled regime shifts, standing
in for the proprietary panel the real study used.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np


class MarketDataError(Exception):
    """Invalid panel/CSV input or a window that cannot produce a snapshot."""


class ProjectionError(MarketDataError):
    """Nearest-correlation projection failed to converge."""

    def __init__(self, message: str, last_iterate: np.ndarray, residual: float):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


SYM_TOL = 1e-12
EIG_TOL = 1e-8

WEEKS_PER_YEAR = 52
DEFAULT_WINDOW = 52
DEFAULT_HORIZON = 4


def correlation_defects(values: np.ndarray) -> list[str]:
    """Human-readable list of violated correlation-matrix invariants."""
    defects = []
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return [f"not square: shape {a.shape}"]
    if not np.all(np.isfinite(a)):
        return ["non-finite entries"]
    sym = np.abs(a - a.T).max()
    if sym > SYM_TOL:
        defects.append(f"asymmetry {sym:.3e} > {SYM_TOL:.0e}")
    if not np.all(np.diag(a) == 1.0):
        defects.append("diagonal not exactly 1")
    off = a[~np.eye(a.shape[0], dtype=bool)]
    if off.size and (off.min() < -1.0 or off.max() > 1.0):
        defects.append("off-diagonal entries outside [-1, 1]")
    lam_min = float(np.linalg.eigvalsh(a).min())
    if lam_min < -EIG_TOL:
        defects.append(f"eigenvalue {lam_min:.3e} < -{EIG_TOL:.0e}")
    return defects


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric unit-diagonal PSD matrix over an ordered asset universe."""

    values: np.ndarray
    asset_ids: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "asset_ids", tuple(self.asset_ids))
        if v.shape != (len(self.asset_ids), len(self.asset_ids)):
            raise MarketDataError(
                f"matrix shape {v.shape} does not match {len(self.asset_ids)} asset ids")
        defects = correlation_defects(v)
        if defects:
            raise MarketDataError("invalid correlation matrix: " + "; ".join(defects))

    @property
    def n(self) -> int:
        return len(self.asset_ids)

    def distance(self) -> np.ndarray:
        """Correlation distance sqrt(2 * (1 - rho)), zero diagonal."""
        d2 = np.maximum(2.0 * (1.0 - self.values), 0.0)
        d = np.sqrt(d2)
        np.fill_diagonal(d, 0.0)
        return d


def default_asset_ids(n: int) -> tuple[str, ...]:
    return tuple(f"A{i:02d}" for i in range(n))


@dataclass(frozen=True)
class MarketSnapshot:
    """One dated observation in panel asset order.

    `date` is None for synthetic snapshots assembled from generated matrices.
    """

    date: Optional[dt.date]
    corr: CorrelationMatrix
    volatilities: np.ndarray       # annualized, decimal/yr
    expected_returns: np.ndarray   # decimal/yr
    forward_returns: np.ndarray    # realized 4-week, decimal

    def __post_init__(self):
        n = self.corr.n
        for name in ("volatilities", "expected_returns", "forward_returns"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, v)
            if v.shape != (n,):
                raise MarketDataError(f"{name} has shape {v.shape}, expected ({n},)")
        if np.any(self.volatilities < 0):
            raise MarketDataError("volatilities must be >= 0")

    @property
    def asset_ids(self) -> tuple[str, ...]:
        return self.corr.asset_ids


@dataclass(frozen=True)
class ReturnPanel:
    """Weekly return / expected-return grid over a fixed universe."""

    asset_ids: tuple[str, ...]
    kinds: tuple[str, ...]             # 'bond' or 'fx', aligned with asset_ids
    dates: tuple[dt.date, ...]
    returns: np.ndarray                # (T, n) weekly total returns
    expected_returns: np.ndarray       # (T, n) 1-year expected returns

    def __post_init__(self):
        object.__setattr__(self, "asset_ids", tuple(self.asset_ids))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "dates", tuple(self.dates))
        r = np.asarray(self.returns, dtype=np.float64)
        e = np.asarray(self.expected_returns, dtype=np.float64)
        object.__setattr__(self, "returns", r)
        object.__setattr__(self, "expected_returns", e)
        n, T = len(self.asset_ids), len(self.dates)
        if len(self.kinds) != n:
            raise MarketDataError("kinds must align with asset_ids")
        if any(k not in ("bond", "fx") for k in self.kinds):
            raise MarketDataError("asset kind must be 'bond' or 'fx'")
        if r.shape != (T, n) or e.shape != (T, n):
            raise MarketDataError(
                f"series shapes {r.shape}/{e.shape} do not match ({T}, {n})")
        # bond segment must come first
        seen_fx = False
        for k in self.kinds:
            if k == "fx":
                seen_fx = True
            elif seen_fx:
                raise MarketDataError("asset order must be bond segment then fx segment")

    @property
    def n_assets(self) -> int:
        return len(self.asset_ids)

    @property
    def n_weeks(self) -> int:
        return len(self.dates)

    def bond_ids(self) -> tuple[str, ...]:
        return tuple(a for a, k in zip(self.asset_ids, self.kinds) if k == "bond")

    def slice_dates(self, start: Optional[dt.date] = None,
                    end: Optional[dt.date] = None) -> "ReturnPanel":
        """Sub-panel with start <= date <= end (inclusive bounds, None = open)."""
        keep = [i for i, d in enumerate(self.dates)
                if (start is None or d >= start) and (end is None or d <= end)]
        if not keep:
            raise MarketDataError(f"no panel dates in [{start}, {end}]")
        return ReturnPanel(self.asset_ids, self.kinds,
                           tuple(self.dates[i] for i in keep),
                           self.returns[keep], self.expected_returns[keep])


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

CSV_HEADER = ["date", "asset_id", "kind", "weekly_return", "expected_return"]


def ingest_returns(csv_path: str | Path) -> ReturnPanel:
    """Load the long-format weekly CSV into a validated panel.

    Schema: `date,asset_id,kind,weekly_return,expected_return`, ISO-8601
    dates on a uniform 7-day grid, kind in {bond, fx}, returns as decimals.
    Assets are ordered bond segment first, preserving file appearance order
    within each segment.
    """
    path = Path(csv_path)
    if not path.exists():
        raise MarketDataError(f"input CSV not found: {path}")

    cells: dict[tuple[dt.date, str], tuple[float, float]] = {}
    kinds: dict[str, str] = {}
    order: list[str] = []
    dates: set[dt.date] = set()

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise MarketDataError(
                f"bad CSV header {header}, expected {CSV_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise MarketDataError(f"row {lineno}: expected 5 columns, got {len(row)}")
            try:
                date = dt.date.fromisoformat(row[0])
            except ValueError as exc:
                raise MarketDataError(f"row {lineno}, column 'date': {row[0]!r}") from exc
            asset = row[1]
            kind = row[2]
            if kind not in ("bond", "fx"):
                raise MarketDataError(
                    f"row {lineno}, column 'kind': {kind!r} not in {{bond, fx}}")
            values = []
            for col, cell in (("weekly_return", row[3]), ("expected_return", row[4])):
                try:
                    values.append(float(cell))
                except ValueError as exc:
                    raise MarketDataError(
                        f"row {lineno}, column '{col}': non-numeric {cell!r}") from exc
            if asset in kinds:
                if kinds[asset] != kind:
                    raise MarketDataError(f"asset {asset!r} has conflicting kinds")
            else:
                kinds[asset] = kind
                order.append(asset)
            key = (date, asset)
            if key in cells:
                raise MarketDataError(
                    f"row {lineno}: duplicate entry for asset {asset!r} on {date}")
            cells[key] = (values[0], values[1])
            dates.add(date)

    if not cells:
        raise MarketDataError(f"{path}: no data rows")

    sorted_dates = sorted(dates)
    for prev, cur in zip(sorted_dates, sorted_dates[1:]):
        if (cur - prev).days != 7:
            raise MarketDataError(
                f"date grid has a gap: missing {prev + dt.timedelta(days=7)} "
                f"(got {cur} after {prev})")

    assets = [a for a in order if kinds[a] == "bond"] + \
             [a for a in order if kinds[a] == "fx"]
    missing = [(d, a) for d in sorted_dates for a in assets if (d, a) not in cells]
    if missing:
        preview = ", ".join(f"{a}@{d}" for d, a in missing[:5])
        raise MarketDataError(
            f"{len(missing)} missing (date, asset) cells, e.g. {preview}")

    T, n = len(sorted_dates), len(assets)
    returns = np.empty((T, n))
    expected = np.empty((T, n))
    for i, d in enumerate(sorted_dates):
        for j, a in enumerate(assets):
            returns[i, j], expected[i, j] = cells[(d, a)]

    return ReturnPanel(tuple(assets), tuple(kinds[a] for a in assets),
                       tuple(sorted_dates), returns, expected)


def write_panel_csv(path: str | Path, panel: ReturnPanel) -> None:
    """Emit the panel in the ingest schema (used by synth-corpus)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i, d in enumerate(panel.dates):
            for j, a in enumerate(panel.asset_ids):
                writer.writerow([d.isoformat(), a, panel.kinds[j],
                                 repr(float(panel.returns[i, j])),
                                 repr(float(panel.expected_returns[i, j]))])


# ---------------------------------------------------------------------------
# nearest correlation matrix (alternating projections)
# ---------------------------------------------------------------------------

def _psd_project(a: np.ndarray) -> np.ndarray:
    lam, vec = np.linalg.eigh((a + a.T) / 2.0)
    lam = np.maximum(lam, 0.0)
    out = (vec * lam) @ vec.T
    return (out + out.T) / 2.0


def _unit_diag_project(a: np.ndarray) -> np.ndarray:
    out = a.copy()
    np.fill_diagonal(out, 1.0)
    return out


def nearest_correlation(matrix: np.ndarray | CorrelationMatrix,
                        tol: float = 1e-8,
                        max_iter: int = 200,
                        asset_ids: Optional[Sequence[str]] = None,
                        return_residuals: bool = False):
    """Project a square matrix to a valid correlation matrix.

    Alternates projections between the PSD cone and the unit-diagonal set
    until the Frobenius change falls below ``tol``, then polishes (exact
    diagonal, clip to [-1, 1]) and re-checks the invariants.  Valid inputs
    come back unchanged.  Raises ProjectionError (carrying the last iterate
    and residual) when ``max_iter`` is exhausted.
    """
    if isinstance(matrix, CorrelationMatrix):
        if asset_ids is None:
            asset_ids = matrix.asset_ids
        matrix = matrix.values
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise MarketDataError(f"nearest_correlation needs a square matrix, got {a.shape}")
    if asset_ids is None:
        asset_ids = default_asset_ids(a.shape[0])

    if not correlation_defects(a):
        # already valid: the projection is the identity
        cm = CorrelationMatrix(a.copy(), tuple(asset_ids))
        return (cm, [0.0]) if return_residuals else cm

    y = (a + a.T) / 2.0
    residuals: list[float] = []
    for _ in range(max_iter):
        x = _psd_project(y)
        y_next = _unit_diag_project(x)
        residual = float(np.linalg.norm(y_next - x, "fro"))
        residuals.append(residual)
        y = y_next
        if residual < tol:
            candidate = np.clip(y, -1.0, 1.0)
            np.fill_diagonal(candidate, 1.0)
            candidate = (candidate + candidate.T) / 2.0
            if not correlation_defects(candidate):
                cm = CorrelationMatrix(candidate, tuple(asset_ids))
                return (cm, residuals) if return_residuals else cm
            # polish pushed an eigenvalue below tolerance: keep iterating
    raise ProjectionError(
        f"nearest_correlation did not converge in {max_iter} iterations "
        f"(residual {residuals[-1]:.3e})", y, residuals[-1])


# ---------------------------------------------------------------------------
# rolling-window snapshots
# ---------------------------------------------------------------------------

def build_snapshots(panel: ReturnPanel,
                    window: int = DEFAULT_WINDOW,
                    horizon: int = DEFAULT_HORIZON) -> list[MarketSnapshot]:
    """One snapshot per eligible date: trailing `window`-week correlation and
    volatility, the expected-return vector at the date, and the compounded
    `horizon`-week forward return.

    Output count is ``panel.n_weeks - window - horizon + 1``.
    """
    T, n = panel.n_weeks, panel.n_assets
    if T < window + horizon:
        raise MarketDataError(
            f"panel has {T} weeks; need at least window+horizon = {window + horizon}")

    ann = math.sqrt(WEEKS_PER_YEAR)
    snapshots: list[MarketSnapshot] = []
    for i in range(window - 1, T - horizon):
        sl = panel.returns[i - window + 1:i + 1]
        stds = sl.std(axis=0, ddof=1)
        zero = np.flatnonzero(stds == 0.0)
        if zero.size:
            raise MarketDataError(
                f"constant return series in window ending {panel.dates[i]}: "
                f"asset {panel.asset_ids[zero[0]]!r}")
        corr_raw = np.atleast_2d(np.corrcoef(sl, rowvar=False))
        corr_raw = (corr_raw + corr_raw.T) / 2.0
        np.fill_diagonal(corr_raw, 1.0)
        corr_raw = np.clip(corr_raw, -1.0, 1.0)
        if correlation_defects(corr_raw):
            corr = nearest_correlation(corr_raw, asset_ids=panel.asset_ids)
        else:
            corr = CorrelationMatrix(corr_raw, panel.asset_ids)
        forward = np.prod(1.0 + panel.returns[i + 1:i + 1 + horizon], axis=0) - 1.0
        snapshots.append(MarketSnapshot(
            date=panel.dates[i],
            corr=corr,
            volatilities=stds * ann,
            expected_returns=panel.expected_returns[i].copy(),
            forward_returns=forward,
        ))
    return snapshots


# ---------------------------------------------------------------------------
# synthetic ground-truth corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthCorpusConfig:
    """One-factor + block market with scheduled regime shifts.

    Within a regime, asset i in block b has weekly return
        r = drift + sigma_w * (lam_i * z_market + gam_i * z_block + c_i * eps)
    with gam chosen so same-block pairs correlate near `intra_block_corr`
    and cross-block pairs near lam_i * lam_j.
    """

    n_bonds: int = 12
    n_fx: int = 4
    n_blocks: int = 4
    intra_block_corr: tuple[float, float] = (0.35, 0.7)
    market_loading: tuple[float, float] = (0.15, 0.45)
    vol_range: tuple[float, float] = (0.02, 0.12)        # annualized
    n_weeks: int = 520
    regime_length: int = 104                              # weeks between shifts
    regime_breaks: Optional[tuple[int, ...]] = None       # explicit override
    bond_yield_range: tuple[float, float] = (0.005, 0.055)
    fx_yield_range: tuple[float, float] = (-0.01, 0.01)
    expected_return_noise: float = 0.004                  # stationary sd of AR(1)
    expected_return_phi: float = 0.98
    start_date: dt.date = dt.date(2007, 4, 2)

    def __post_init__(self):
        if self.n_bonds < 1:
            raise MarketDataError("need at least one bond asset")
        if self.n_blocks < 1:
            raise MarketDataError("need at least one block")
        if self.n_blocks > self.n_assets:
            raise MarketDataError(
                f"n_blocks {self.n_blocks} exceeds asset count {self.n_assets}")
        if self.n_weeks < 2:
            raise MarketDataError("corpus needs at least 2 weeks")

    @property
    def n_assets(self) -> int:
        return self.n_bonds + self.n_fx

    def breaks(self) -> list[int]:
        if self.regime_breaks is not None:
            return sorted(set(int(b) for b in self.regime_breaks if 0 < b < self.n_weeks))
        if self.regime_length <= 0:
            return []
        return list(range(self.regime_length, self.n_weeks, self.regime_length))


def synth_corpus(config: SynthCorpusConfig, seed: int) -> ReturnPanel:
    """Deterministic-given-seed weekly panel from the block-factor model."""
    n = config.n_assets
    rng = np.random.default_rng(seed)
    T = config.n_weeks
    blocks = np.array_split(np.arange(n), config.n_blocks)
    block_of = np.empty(n, dtype=int)
    for b, members in enumerate(blocks):
        block_of[members] = b

    # regime segments
    edges = [0] + config.breaks() + [T]
    returns = np.empty((T, n))
    sqrt_w = math.sqrt(WEEKS_PER_YEAR)

    # per-asset base yields (constant across regimes)
    base_yield = np.empty(n)
    base_yield[:config.n_bonds] = rng.uniform(*config.bond_yield_range, config.n_bonds)
    base_yield[config.n_bonds:] = rng.uniform(*config.fx_yield_range, config.n_fx)

    for lo, hi in zip(edges, edges[1:]):
        lam = rng.uniform(*config.market_loading, n)
        rho_block = rng.uniform(*config.intra_block_corr, config.n_blocks)
        vol_year = rng.uniform(*config.vol_range, n)
        gam = np.sqrt(np.maximum(rho_block[block_of] - lam ** 2, 0.0))
        resid = np.sqrt(np.maximum(1.0 - lam ** 2 - gam ** 2, 0.0))

        weeks = hi - lo
        z_market = rng.standard_normal(weeks)
        z_block = rng.standard_normal((weeks, config.n_blocks))
        eps = rng.standard_normal((weeks, n))
        x = (z_market[:, None] * lam[None, :]
             + z_block[:, block_of] * gam[None, :]
             + eps * resid[None, :])
        sigma_week = vol_year / sqrt_w
        returns[lo:hi] = base_yield[None, :] / WEEKS_PER_YEAR + x * sigma_week[None, :]

    # slow mean-reverting expected-return noise around the base yield
    phi = config.expected_return_phi
    innov_sd = config.expected_return_noise * math.sqrt(max(1.0 - phi ** 2, 0.0))
    noise = np.empty((T, n))
    state = rng.standard_normal(n) * config.expected_return_noise
    for week in range(T):
        noise[week] = state
        state = phi * state + rng.standard_normal(n) * innov_sd
    expected = base_yield[None, :] + noise

    dates = tuple(config.start_date + dt.timedelta(weeks=w) for w in range(T))
    asset_ids = tuple([f"BOND{i:02d}" for i in range(config.n_bonds)]
                      + [f"FX{i:02d}" for i in range(config.n_fx)])
    kinds = tuple(["bond"] * config.n_bonds + ["fx"] * config.n_fx)
    return ReturnPanel(asset_ids, kinds, dates, returns, expected)


# ---------------------------------------------------------------------------
# snapshot JSON-lines serialization
# ---------------------------------------------------------------------------

def snapshot_to_record(snap: MarketSnapshot) -> dict:
    return {
        "date": snap.date.isoformat() if snap.date is not None else None,
        "asset_ids": list(snap.asset_ids),
        "corr": snap.corr.values.reshape(-1).tolist(),
        "volatilities": snap.volatilities.tolist(),
        "expected_returns": snap.expected_returns.tolist(),
        "forward_returns": snap.forward_returns.tolist(),
    }


def snapshot_from_record(rec: dict) -> MarketSnapshot:
    ids = tuple(rec["asset_ids"])
    n = len(ids)
    corr = CorrelationMatrix(np.asarray(rec["corr"], dtype=np.float64).reshape(n, n), ids)
    date = dt.date.fromisoformat(rec["date"]) if rec.get("date") else None
    return MarketSnapshot(date, corr,
                          np.asarray(rec["volatilities"]),
                          np.asarray(rec["expected_returns"]),
                          np.asarray(rec["forward_returns"]))


def save_snapshots(path: str | Path, snapshots: Iterable[MarketSnapshot]) -> None:
    with open(path, "w") as fh:
        for snap in snapshots:
            fh.write(json.dumps(snapshot_to_record(snap)))
            fh.write("\n")


def load_snapshots(path: str | Path) -> list[MarketSnapshot]:
    path = Path(path)
    if not path.exists():
        raise MarketDataError(f"snapshot file not found: {path}")
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(snapshot_from_record(json.loads(line)))
    return out


def save_matrices(path: str | Path, matrices: Iterable[CorrelationMatrix]) -> None:
    """Matrix-only records in the snapshot JSONL format (GAN samples)."""
    with open(path, "w") as fh:
        for m in matrices:
            fh.write(json.dumps({"asset_ids": list(m.asset_ids),
                                 "corr": m.values.reshape(-1).tolist()}))
            fh.write("\n")


def load_matrices(path: str | Path) -> list[CorrelationMatrix]:
    path = Path(path)
    if not path.exists():
        raise MarketDataError(f"matrix file not found: {path}")
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            ids = tuple(rec["asset_ids"])
            n = len(ids)
            out.append(CorrelationMatrix(
                np.asarray(rec["corr"], dtype=np.float64).reshape(n, n), ids))
    return out
