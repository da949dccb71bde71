"""Tracking-error portfolio optimization over a simulation set.

The problem: choose weights w minimizing the simulated deviations
|| R w - r_bench ||_2 subject to a floor on expected excess return
(mu' w >= mu_bench + t), full investment of the bond segment
(sum of bond weights = 1), long-only bond bounds, and a bounded unfunded FX
overlay.  The squared objective is optimized (same argmin); reported
objective values are mean squared deviations, (1/n_sims)||R w - r_bench||^2.

The solver is an operator-splitting (ADMM) iteration in the standard
l <= A w <= u form with a cached dense KKT factorization, vector rho with
heavier weight on equality rows, over-relaxation, optional rho adaptation,
and a divergence-certificate test for primal infeasibility.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .simulation import SimulationSet


class AllocatorError(Exception):
    pass


@dataclass(frozen=True)
class Bounds:
    bond: tuple[float, float] = (0.0, 1.0)
    fx: tuple[float, float] = (-0.05, 0.05)

    def __post_init__(self):
        for name, (lo, hi) in (("bond", self.bond), ("fx", self.fx)):
            if lo > hi:
                raise AllocatorError(f"{name} bounds {lo}..{hi} are not ordered")


@dataclass(frozen=True)
class PortfolioProblem:
    """QP data in the form min 1/2 w'Pw + q'w  s.t.  l <= Aw <= u."""

    simset: SimulationSet
    bench_index: int
    target: float                    # excess expected-return floor, decimal/yr
    bounds: Bounds
    kinds: tuple[str, ...]
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    objective_constant: float        # (1/n) r_bench' r_bench

    @property
    def n_assets(self) -> int:
        return self.P.shape[0]


@dataclass(frozen=True)
class SolverConfig:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 50_000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho: bool = True
    check_interval: int = 25
    feas_tol: float = 1e-6           # absolute primal feasibility cap at "solved"
    eps_infeas: float = 1e-8
    polish: bool = True              # active-set refinement of the ADMM iterate


@dataclass
class QpSolution:
    weights: np.ndarray
    objective: float                 # mean squared tracking deviation at w
    iterations: int
    primal_residual: float
    dual_residual: float
    status: str                      # solved | max_iter | infeasible


def build_problem(simset: SimulationSet, kinds: Sequence[str], bench_id: str,
                  target: float, bounds: Bounds = Bounds()) -> PortfolioProblem:
    """Assemble QP data for one benchmark and excess-return target.

    `kinds` marks each asset 'bond' or 'fx' in simset order; the benchmark
    must be a bond.  The budget row covers bonds only: the FX overlay is
    unfunded and enters solely through its box bounds.
    """
    kinds = tuple(kinds)
    m = simset.n_assets
    if len(kinds) != m:
        raise AllocatorError(f"kinds has {len(kinds)} entries for {m} assets")
    if any(k not in ("bond", "fx") for k in kinds):
        raise AllocatorError("kinds entries must be 'bond' or 'fx'")
    if bench_id not in simset.asset_ids:
        raise AllocatorError(f"benchmark {bench_id!r} not in universe")
    bench_index = simset.asset_ids.index(bench_id)
    if kinds[bench_index] != "bond":
        raise AllocatorError(f"benchmark {bench_id!r} is an FX asset")
    if target < 0:
        raise AllocatorError("excess return target must be >= 0")

    R = simset.returns
    n_sims = simset.n_sims
    r_bench = R[:, bench_index]
    P = 2.0 * (R.T @ R) / n_sims
    P = (P + P.T) / 2.0
    q = -2.0 * (R.T @ r_bench) / n_sims

    bond_row = np.array([1.0 if k == "bond" else 0.0 for k in kinds])
    lo = np.array([bounds.bond[0] if k == "bond" else bounds.fx[0] for k in kinds])
    hi = np.array([bounds.bond[1] if k == "bond" else bounds.fx[1] for k in kinds])

    A = np.vstack([simset.mu[None, :], bond_row[None, :], np.eye(m)])
    l = np.concatenate([[simset.mu[bench_index] + target], [1.0], lo])
    u = np.concatenate([[np.inf], [1.0], hi])

    return PortfolioProblem(
        simset=simset, bench_index=bench_index, target=float(target),
        bounds=bounds, kinds=kinds, P=P, q=q, A=A, l=l, u=u,
        objective_constant=float(r_bench @ r_bench) / n_sims)


def _norm_inf(x: np.ndarray) -> float:
    return float(np.abs(x).max()) if x.size else 0.0


def tracking_objective(problem: PortfolioProblem, w: np.ndarray) -> float:
    """Mean squared deviation (1/n)||R w - r_bench||^2 at weights w."""
    diff = problem.simset.returns @ w - problem.simset.returns[:, problem.bench_index]
    return float(diff @ diff) / problem.simset.n_sims


def solve_qp(problem: PortfolioProblem,
             cfg: SolverConfig = SolverConfig()) -> QpSolution:
    """ADMM iteration over the QP; deterministic for fixed problem and cfg.

    Returns status 'solved' only when the OSQP-style scaled residual
    tolerances hold and the absolute constraint violation is within
    cfg.feas_tol; 'infeasible' on a primal divergence certificate.
    """
    P, q, A, l, u = problem.P, problem.q, problem.A, problem.l, problem.u
    m, n = A.shape

    eq = np.isclose(l, u)
    rho = np.where(eq, 1e3 * cfg.rho, cfg.rho)

    def factor(rho_vec):
        kkt = np.zeros((n + m, n + m))
        kkt[:n, :n] = P + cfg.sigma * np.eye(n)
        kkt[:n, n:] = A.T
        kkt[n:, :n] = A
        kkt[n:, n:] = -np.diag(1.0 / rho_vec)
        return scipy.linalg.lu_factor(kkt)

    lu = factor(rho)
    x = np.zeros(n)
    z = np.zeros(m)
    y = np.zeros(m)

    status = "max_iter"
    iterations = cfg.max_iter
    r_prim = r_dual = np.inf

    for k in range(1, cfg.max_iter + 1):
        rhs = np.concatenate([cfg.sigma * x - q, z - y / rho])
        sol = scipy.linalg.lu_solve(lu, rhs)
        x_tilde, nu = sol[:n], sol[n:]
        z_tilde = z + (nu - y) / rho

        x = cfg.alpha * x_tilde + (1.0 - cfg.alpha) * x
        z_relaxed = cfg.alpha * z_tilde + (1.0 - cfg.alpha) * z
        z_new = np.clip(z_relaxed + y / rho, l, u)
        y_new = y + rho * (z_relaxed - z_new)
        dy = y_new - y
        z, y = z_new, y_new

        if k % cfg.check_interval == 0 or k == cfg.max_iter:
            Ax = A @ x
            Px = P @ x
            Aty = A.T @ y
            r_prim = _norm_inf(Ax - z)
            r_dual = _norm_inf(Px + q + Aty)
            eps_prim = cfg.eps_abs + cfg.eps_rel * max(_norm_inf(Ax), _norm_inf(z))
            eps_dual = cfg.eps_abs + cfg.eps_rel * max(
                _norm_inf(Px), _norm_inf(Aty), _norm_inf(q))
            if r_prim <= min(eps_prim, cfg.feas_tol) and r_dual <= eps_dual:
                status = "solved"
                iterations = k
                break

            # primal infeasibility certificate from the dual update direction
            dy_norm = _norm_inf(dy)
            if dy_norm > 0:
                dyn = dy / dy_norm
                if _norm_inf(A.T @ dyn) <= cfg.eps_infeas:
                    pos, neg = np.maximum(dyn, 0.0), np.minimum(dyn, 0.0)
                    support = 0.0
                    certificate = True
                    for bound, part in ((u, pos), (l, neg)):
                        finite = np.isfinite(bound)
                        if _norm_inf(part * ~finite) > cfg.eps_infeas:
                            certificate = False
                            break
                        support += float(bound[finite] @ part[finite])
                    if certificate and support < -cfg.eps_infeas:
                        status = "infeasible"
                        iterations = k
                        break

            if cfg.adaptive_rho and r_dual > 0 and r_prim > 0:
                prim_rel = r_prim / max(_norm_inf(Ax), _norm_inf(z), 1e-12)
                dual_rel = r_dual / max(_norm_inf(Px), _norm_inf(Aty),
                                        _norm_inf(q), 1e-12)
                ratio = np.sqrt(prim_rel / dual_rel)
                if ratio > 5.0 or ratio < 0.2:
                    scale = float(np.clip(ratio, 1e-3, 1e3))
                    base = float(np.clip(cfg.rho * scale, 1e-6, 1e6))
                    rho = np.where(eq, 1e3 * base, base)
                    lu = factor(rho)

    if status == "solved" and cfg.polish:
        x, r_prim, r_dual = _polish(problem, cfg, x, y, z, r_prim, r_dual)

    return QpSolution(
        weights=x.copy(),
        objective=tracking_objective(problem, x),
        iterations=iterations,
        primal_residual=float(r_prim),
        dual_residual=float(r_dual),
        status=status,
    )


def _polish(problem: PortfolioProblem, cfg: SolverConfig,
            x: np.ndarray, y: np.ndarray, z: np.ndarray,
            r_prim: float, r_dual: float):
    """Refine the ADMM iterate on its active set (equality-constrained solve).

    Active bounds are read from the dual signs; the reduced KKT system is
    solved by least squares.  The polished point replaces the iterate only
    if it does not worsen feasibility or the dual residual.
    """
    P, q, A, l, u = problem.P, problem.q, problem.A, problem.l, problem.u
    m, n = A.shape
    eq = np.isclose(l, u)
    act_tol = 10.0 * cfg.feas_tol
    lower = (~eq) & ((y < -cfg.eps_abs) | (z <= l + act_tol)) & np.isfinite(l)
    upper = (~eq) & ((y > cfg.eps_abs) | (z >= u - act_tol)) & np.isfinite(u)
    rows = np.flatnonzero(eq | lower | upper)
    if rows.size == 0:
        return x, r_prim, r_dual
    bounds = np.where(eq | lower, l, u)[rows]

    A_act = A[rows]
    k = rows.size
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = P
    kkt[:n, n:] = A_act.T
    kkt[n:, :n] = A_act
    rhs = np.concatenate([-q, bounds])
    try:
        sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    except np.linalg.LinAlgError:
        return x, r_prim, r_dual
    x_new = sol[:n]
    y_new = np.zeros(m)
    y_new[rows] = sol[n:]

    Ax = A @ x_new
    viol = np.maximum(np.maximum(l - Ax, Ax - u), 0.0)
    new_prim = _norm_inf(viol)
    new_dual = _norm_inf(P @ x_new + q + A.T @ y_new)
    if new_prim <= max(r_prim, cfg.feas_tol) and new_dual <= max(r_dual, cfg.eps_abs):
        return x_new, new_prim, new_dual
    return x, r_prim, r_dual


def constraint_violations(problem: PortfolioProblem, w: np.ndarray) -> dict[str, float]:
    """Budget, return-floor, and box violations at w (all >= 0, 0 = feasible)."""
    bond = np.array([k == "bond" for k in problem.kinds])
    budget = abs(float(w[bond].sum()) - 1.0)
    mu = problem.simset.mu
    floor = max(0.0, (mu[problem.bench_index] + problem.target) - float(mu @ w))
    lo = problem.l[2:]
    hi = problem.u[2:]
    box = float(np.maximum(np.maximum(lo - w, w - hi), 0.0).max())
    return {"budget": budget, "return_floor": floor, "box": box}


def tev(port_returns: np.ndarray, bench_returns: np.ndarray,
        periods_per_year: int = 12) -> float:
    """Annualized tracking error volatility in basis points.

    Sample standard deviation (ddof=1) of per-period relative returns,
    scaled by sqrt(periods_per_year) and quoted in bps.
    """
    port = np.asarray(port_returns, dtype=np.float64)
    bench = np.asarray(bench_returns, dtype=np.float64)
    if port.shape != bench.shape or port.ndim != 1:
        raise AllocatorError(
            f"need equal-length 1-d series, got {port.shape} and {bench.shape}")
    if port.size < 2:
        raise AllocatorError("tev needs at least 2 periods")
    diff = port - bench
    return float(diff.std(ddof=1) * np.sqrt(periods_per_year) * 1e4)
