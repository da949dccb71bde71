"""The experiment grid: benchmarks x excess targets x dataset variants x sim kinds.

Each cell optimizes weights on one simulation set, holds them fixed, and is
evaluated on the held-out panel: annualized tracking error volatility from
4-week relative returns, and expected excess return averaged over the test
period.  Cells where any variant's optimizer fails are excluded for every
variant, keeping the design paired; one-sided paired t-tests then compare
each synthetic-data variant's excess-return-to-TEV ratio against the
empirical baseline (negative t means the variant outperforms).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .allocator import Bounds, SolverConfig, build_problem, solve_qp, tev
from .market import MarketSnapshot, ReturnPanel
from .simulation import MvConfig, SimulationSet, combine, fr_sims, mv_sims


class BacktestError(Exception):
    pass


VARIANTS = ("Empirical", "Synthetic", "Combined")
DEFAULT_TARGETS_BPS = tuple(range(20, 101, 10))
TABLE4_COLUMNS = [
    "sim_kind", "variant", "n_obs", "tev_bps", "excess_er_bps",
    "avg_excess_er_tev_ratio", "t_stat", "p_value",
    "min_excess_er_tev_ratio", "median_excess_er_tev_ratio",
    "max_excess_er_tev_ratio", "share_ratio_gt_empirical",
]


# ---------------------------------------------------------------------------
# Student-t distribution (series/continued-fraction incomplete beta)
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 300,
            eps: float = 3e-15) -> float:
    """Continued fraction for the regularized incomplete beta function."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise BacktestError(f"incomplete beta continued fraction did not converge "
                        f"(a={a}, b={b}, x={x})")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise BacktestError(f"betainc_reg needs x in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, dof: int) -> float:
    """P(T <= t) for Student's t with `dof` degrees of freedom."""
    if dof < 1:
        raise BacktestError(f"degrees of freedom must be >= 1, got {dof}")
    x = dof / (dof + t * t)
    tail = 0.5 * betainc_reg(dof / 2.0, 0.5, x)
    return tail if t < 0 else 1.0 - tail


def paired_t_test(baseline: Sequence[float], variant: Sequence[float],
                  alternative: str = "variant_greater") -> tuple[float, float]:
    """Paired one-sided t-test on d = baseline - variant.

    With the default alternative (variant > baseline), small p comes with
    negative t: the variant outperforming drives d below zero.
    """
    base = np.asarray(baseline, dtype=np.float64)
    var = np.asarray(variant, dtype=np.float64)
    if base.shape != var.shape or base.ndim != 1:
        raise BacktestError("paired samples must be equal-length 1-d arrays")
    n = base.size
    if n < 3:
        raise BacktestError(f"paired_t_test needs >= 3 pairs, got {n}")
    d = base - var
    sd = d.std(ddof=1)
    if sd == 0.0:
        raise BacktestError("paired_t_test: zero variance of the differences")
    t = float(d.mean() / (sd / math.sqrt(n)))
    if alternative == "variant_greater":
        p = student_t_cdf(t, n - 1)
    elif alternative == "baseline_greater":
        p = 1.0 - student_t_cdf(t, n - 1)
    else:
        raise BacktestError(f"unknown alternative {alternative!r}")
    return t, float(p)


# ---------------------------------------------------------------------------
# evaluation on the held-out panel
# ---------------------------------------------------------------------------

def period_returns(panel: ReturnPanel, period_weeks: int = 4) -> np.ndarray:
    """Non-overlapping compounded `period_weeks`-week returns, (P, n)."""
    n_periods = panel.n_weeks // period_weeks
    if n_periods < 1:
        raise BacktestError(f"panel too short for {period_weeks}-week periods")
    out = np.empty((n_periods, panel.n_assets))
    for p in range(n_periods):
        chunk = panel.returns[p * period_weeks:(p + 1) * period_weeks]
        out[p] = np.prod(1.0 + chunk, axis=0) - 1.0
    return out


def evaluate(weights: np.ndarray, test_panel: ReturnPanel, bench_id: str,
             period_weeks: int = 4, min_periods: int = 12) -> tuple[float, float]:
    """(TEV bps, excess expected return bps) for fixed weights on the panel.

    Portfolio period returns apply the fixed weights to per-asset compounded
    period returns (weights are restored to target each period); excess ER
    averages the panel's expected-return vectors over the test dates.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (test_panel.n_assets,):
        raise BacktestError(
            f"weights shape {w.shape} does not match panel ({test_panel.n_assets})")
    if bench_id not in test_panel.asset_ids:
        raise BacktestError(f"benchmark {bench_id!r} not in test panel")
    bench_idx = test_panel.asset_ids.index(bench_id)

    periods = period_returns(test_panel, period_weeks)
    if periods.shape[0] < min_periods:
        raise BacktestError(
            f"test panel covers {periods.shape[0]} periods; need >= {min_periods}")
    port = periods @ w
    bench = periods[:, bench_idx]
    tev_bps = tev(port, bench, periods_per_year=12)

    mu_bar = test_panel.expected_returns.mean(axis=0)
    excess_er_bps = float((mu_bar @ w - mu_bar[bench_idx]) * 1e4)
    return tev_bps, excess_er_bps


# ---------------------------------------------------------------------------
# the grid
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    benchmark_id: str
    target_bps: int
    variant: str
    sim_kind: str
    weights: Optional[np.ndarray]
    tev_bps: Optional[float]
    excess_er_bps: Optional[float]
    converged: bool
    solver_status: str

    @property
    def ratio(self) -> Optional[float]:
        if not self.converged or self.tev_bps is None or self.tev_bps <= 0.0:
            return None
        return self.excess_er_bps / self.tev_bps

    def to_record(self) -> dict:
        return {
            "benchmark_id": self.benchmark_id,
            "target_bps": self.target_bps,
            "variant": self.variant,
            "sim_kind": self.sim_kind,
            "weights": None if self.weights is None else self.weights.tolist(),
            "tev_bps": self.tev_bps,
            "excess_er_bps": self.excess_er_bps,
            "ratio": self.ratio,
            "converged": self.converged,
            "solver_status": self.solver_status,
        }


@dataclass(frozen=True)
class ReportRow:
    sim_kind: str
    variant: str
    n_obs: int
    tev_bps: float
    excess_er_bps: float
    avg_ratio: float
    t_stat: Optional[float]
    p_value: Optional[float]
    min_ratio: float
    median_ratio: float
    max_ratio: float
    share_outperform: Optional[float]
    ties: Optional[int]


@dataclass
class ComparisonReport:
    rows: list[ReportRow]
    retained_cells: dict[str, int]        # per sim kind
    excluded_cells: dict[str, int]


def build_simulation_sets(train_snapshots: Sequence[MarketSnapshot],
                          synth_snapshots: Sequence[MarketSnapshot],
                          mv_cfg: MvConfig) -> dict[tuple[str, str], SimulationSet]:
    """The six (kind, variant) simulation sets used by the grid.

    The synthetic MV draws use a seed derived from mv_cfg.seed so empirical
    and synthetic rows never share a stream.
    """
    emp_fr = fr_sims(train_snapshots, "Empirical")
    syn_fr = fr_sims(synth_snapshots, "Synthetic")
    emp_mv = mv_sims(train_snapshots, mv_cfg, "Empirical")
    syn_cfg = MvConfig(draws=mv_cfg.draws, horizon=mv_cfg.horizon,
                       seed=mv_cfg.seed + 0x5EED)
    syn_mv = mv_sims(synth_snapshots, syn_cfg, "Synthetic")
    return {
        ("FR", "Empirical"): emp_fr,
        ("FR", "Synthetic"): syn_fr,
        ("FR", "Combined"): combine([emp_fr, syn_fr]),
        ("MV", "Empirical"): emp_mv,
        ("MV", "Synthetic"): syn_mv,
        ("MV", "Combined"): combine([emp_mv, syn_mv]),
    }


def run_grid(train_snapshots: Sequence[MarketSnapshot],
             synth_snapshots: Sequence[MarketSnapshot],
             test_panel: ReturnPanel,
             benchmarks: Optional[Sequence[str]] = None,
             targets_bps: Sequence[int] = DEFAULT_TARGETS_BPS,
             sim_kinds: Sequence[str] = ("FR", "MV"),
             mv_cfg: MvConfig = MvConfig(),
             bounds: Bounds = Bounds(),
             solver_cfg: SolverConfig = SolverConfig()) -> list[ExperimentResult]:
    """Solve and evaluate every grid cell; deterministic given all seeds.

    Results carry per-variant convergence flags; pairwise exclusion happens
    in `report`, so the returned list is the full grid.
    """
    if not train_snapshots:
        raise BacktestError("need training snapshots")
    if not synth_snapshots:
        raise BacktestError("need synthetic snapshots")
    if test_panel.n_weeks == 0:
        raise BacktestError("empty test panel")
    ids = tuple(test_panel.asset_ids)
    if train_snapshots[0].asset_ids != ids or synth_snapshots[0].asset_ids != ids:
        raise BacktestError("universes of snapshots and test panel differ")

    train_dates = [s.date for s in train_snapshots if s.date is not None]
    if train_dates and min(test_panel.dates) <= max(train_dates):
        raise BacktestError(
            f"test panel starts {min(test_panel.dates)}, inside the training "
            f"window ending {max(train_dates)}")

    kinds_by_asset = test_panel.kinds
    if benchmarks is None:
        benchmarks = test_panel.bond_ids()

    simsets = build_simulation_sets(train_snapshots, synth_snapshots, mv_cfg)

    results: list[ExperimentResult] = []
    for sim_kind in sim_kinds:
        for bench in benchmarks:
            for target in targets_bps:
                for variant in VARIANTS:
                    simset = simsets[(sim_kind, variant)]
                    problem = build_problem(simset, kinds_by_asset, bench,
                                            target / 1e4, bounds)
                    sol = solve_qp(problem, solver_cfg)
                    if sol.status == "solved":
                        tev_bps, er_bps = evaluate(sol.weights, test_panel, bench)
                        results.append(ExperimentResult(
                            benchmark_id=bench, target_bps=int(target),
                            variant=variant, sim_kind=sim_kind,
                            weights=sol.weights, tev_bps=tev_bps,
                            excess_er_bps=er_bps, converged=True,
                            solver_status=sol.status))
                    else:
                        results.append(ExperimentResult(
                            benchmark_id=bench, target_bps=int(target),
                            variant=variant, sim_kind=sim_kind,
                            weights=None, tev_bps=None, excess_er_bps=None,
                            converged=False, solver_status=sol.status))
    return results


def report(results: Sequence[ExperimentResult],
           baseline: str = "Empirical") -> ComparisonReport:
    """Aggregate a paired grid into Table-4-style rows.

    A cell is retained only when every variant converged with a defined
    ratio; ties against the baseline count as non-wins and are reported
    separately.
    """
    results = list(results)
    if not results:
        raise BacktestError("no results to report")

    by_cell: dict[tuple[str, str, int], dict[str, ExperimentResult]] = {}
    for r in results:
        by_cell.setdefault((r.sim_kind, r.benchmark_id, r.target_bps), {})[r.variant] = r

    kinds = sorted({r.sim_kind for r in results},
                   key=lambda k: ("FR", "MV").index(k) if k in ("FR", "MV") else 99)
    rows: list[ReportRow] = []
    retained_cells: dict[str, int] = {}
    excluded_cells: dict[str, int] = {}
    for kind in kinds:
        cells = {key: cell for key, cell in by_cell.items() if key[0] == kind}
        retained = {key: cell for key, cell in cells.items()
                    if all(v in cell and cell[v].ratio is not None for v in VARIANTS)}
        retained_cells[kind] = len(retained)
        excluded_cells[kind] = len(cells) - len(retained)
        if not retained:
            continue
        keys = sorted(retained)
        ratios = {v: np.array([retained[k][v].ratio for k in keys]) for v in VARIANTS}
        for variant in VARIANTS:
            rs = retained
            tevs = np.array([rs[k][variant].tev_bps for k in keys])
            ers = np.array([rs[k][variant].excess_er_bps for k in keys])
            ratio = ratios[variant]
            if variant == baseline:
                t_stat = p_value = share = ties = None
            else:
                try:
                    t_stat, p_value = paired_t_test(ratios[baseline], ratio)
                except BacktestError:
                    t_stat = p_value = None
                wins = int(np.sum(ratio > ratios[baseline]))
                ties = int(np.sum(ratio == ratios[baseline]))
                share = wins / len(keys)
            rows.append(ReportRow(
                sim_kind=kind, variant=variant, n_obs=len(keys),
                tev_bps=float(tevs.mean()), excess_er_bps=float(ers.mean()),
                avg_ratio=float(ratio.mean()), t_stat=t_stat, p_value=p_value,
                min_ratio=float(ratio.min()), median_ratio=float(np.median(ratio)),
                max_ratio=float(ratio.max()), share_outperform=share, ties=ties))
    if not rows:
        raise BacktestError("no converged cells survive the paired exclusion")
    return ComparisonReport(rows=rows, retained_cells=retained_cells,
                            excluded_cells=excluded_cells)


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def _fmt(x, digits=6) -> str:
    return "" if x is None else f"{x:.{digits}f}"


def write_table4_csv(path: str | Path, rep: ComparisonReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE4_COLUMNS)
        for row in rep.rows:
            writer.writerow([
                row.sim_kind, row.variant, row.n_obs,
                _fmt(row.tev_bps, 4), _fmt(row.excess_er_bps, 4),
                _fmt(row.avg_ratio, 6), _fmt(row.t_stat, 4), _fmt(row.p_value, 8),
                _fmt(row.min_ratio, 6), _fmt(row.median_ratio, 6),
                _fmt(row.max_ratio, 6), _fmt(row.share_outperform, 4),
            ])


def write_experiments_jsonl(path: str | Path,
                            results: Sequence[ExperimentResult]) -> None:
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_record(), sort_keys=True))
            fh.write("\n")


def load_experiments_jsonl(path: str | Path) -> list[ExperimentResult]:
    path = Path(path)
    if not path.exists():
        raise BacktestError(f"experiments file not found: {path}")
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(ExperimentResult(
                benchmark_id=rec["benchmark_id"], target_bps=rec["target_bps"],
                variant=rec["variant"], sim_kind=rec["sim_kind"],
                weights=None if rec["weights"] is None else np.asarray(rec["weights"]),
                tev_bps=rec["tev_bps"], excess_er_bps=rec["excess_er_bps"],
                converged=rec["converged"], solver_status=rec["solver_status"]))
    return out


def write_summary_txt(path: str | Path, rep: ComparisonReport,
                      results: Sequence[ExperimentResult]) -> None:
    lines = ["tracking-error backtest summary",
             "excess ER measured from expected returns averaged over the test period",
             ""]
    total = len(list(results))
    lines.append(f"grid cells solved: {total}")
    for kind in rep.retained_cells:
        lines.append(f"{kind}: retained {rep.retained_cells[kind]} cells, "
                     f"excluded {rep.excluded_cells[kind]} (paired rule)")
    lines.append("")
    for row in rep.rows:
        t_part = "" if row.t_stat is None else \
            f"  t={row.t_stat:.2f} p={row.p_value:.6f}"
        share_part = "" if row.share_outperform is None else \
            f"  share>baseline={row.share_outperform:.1%} (ties {row.ties})"
        lines.append(
            f"{row.sim_kind:>3} {row.variant:<10} n={row.n_obs:<4} "
            f"TEV={row.tev_bps:7.2f}bps  ER={row.excess_er_bps:7.2f}bps  "
            f"ratio={row.avg_ratio:.4f}{t_part}{share_part}")
    Path(path).write_text("\n".join(lines) + "\n")
