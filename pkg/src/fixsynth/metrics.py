"""Realism metrics for correlation matrices and the clustering they rely on.

The five summary metrics (mean correlation, eigenvalue Gini, cophenetic
correlation under single and ward linkage, negative mass of the top
eigenvector, eigenvalue power-law exponent) characterize how "market-like"
a matrix is; collections are compared via their per-metric means and
standard deviations.

Clustering operates on the correlation distance D = sqrt(2 * (1 - rho)).
Single linkage is built from Prim's minimum spanning tree; ward linkage
runs a global-minimum agglomeration with the Lance-Williams update on
squared distances.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .market import CorrelationMatrix


class MetricError(Exception):
    """Degenerate input for a metric (e.g. zero-variance distances)."""


METRIC_NAMES = ("mean_correl", "eigen_gini", "coph_corr_single",
                "coph_corr_ward", "perron_frob_sum_neg", "power_eigen_exponent")


def _values(c) -> np.ndarray:
    v = c.values if isinstance(c, CorrelationMatrix) else np.asarray(c, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise MetricError(f"need a square matrix, got shape {v.shape}")
    return v


def correlation_distance(c) -> np.ndarray:
    """D = sqrt(2 * (1 - rho)); exact zeros on the diagonal."""
    v = _values(c)
    d = np.sqrt(np.maximum(2.0 * (1.0 - v), 0.0))
    np.fill_diagonal(d, 0.0)
    return d


def condensed(matrix: np.ndarray) -> np.ndarray:
    """Strict upper triangle, row-major (the usual condensed layout)."""
    i, j = np.triu_indices(matrix.shape[0], k=1)
    return matrix[i, j]


def mean_correl(c) -> float:
    """Mean of the strictly-upper-triangle correlation entries."""
    v = _values(c)
    if v.shape[0] < 2:
        raise MetricError("mean_correl needs at least 2 assets")
    return float(condensed(v).mean())


def eigen_gini(c) -> float:
    """Gini coefficient of the (clamped at 0) eigenvalue spectrum."""
    v = _values(c)
    lam = np.maximum(np.linalg.eigvalsh(v), 0.0)
    n = lam.size
    lam_bar = lam.mean()
    if lam_bar <= 0:
        raise MetricError("zero spectrum")
    return float(np.abs(lam[:, None] - lam[None, :]).sum() / (2.0 * n * n * lam_bar))


# ---------------------------------------------------------------------------
# hierarchical clustering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkageTree:
    """Merge table in the usual (left, right, height, size) layout.

    Leaves are 0..n-1; the cluster created by merge k is n + k.  Heights are
    non-decreasing for single linkage by construction.
    """

    merges: np.ndarray          # (n-1, 4) float
    n_leaves: int
    method: str

    def heights(self) -> np.ndarray:
        return self.merges[:, 2].copy()

    def cophenetic_matrix(self) -> np.ndarray:
        """Pairwise height at which each leaf pair first co-clusters."""
        n = self.n_leaves
        coph = np.zeros((n, n))
        members: dict[int, list[int]] = {i: [i] for i in range(n)}
        for k in range(self.merges.shape[0]):
            a, b, h = int(self.merges[k, 0]), int(self.merges[k, 1]), self.merges[k, 2]
            left, right = members.pop(a), members.pop(b)
            for i in left:
                for j in right:
                    coph[i, j] = h
                    coph[j, i] = h
            members[n + k] = left + right
        return coph


def _mst_edges(d: np.ndarray) -> list[tuple[float, int, int]]:
    """Prim's algorithm; returns (weight, i, j) edges of the MST."""
    n = d.shape[0]
    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    best = d[0].copy()
    best_from = np.zeros(n, dtype=int)
    edges = []
    for _ in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        nxt = int(np.argmin(cand))
        i, j = int(best_from[nxt]), nxt
        edges.append((float(d[i, j]), min(i, j), max(i, j)))
        in_tree[nxt] = True
        closer = d[nxt] < best
        best_from = np.where(closer & ~in_tree, nxt, best_from)
        best = np.where(closer & ~in_tree, d[nxt], best)
    return edges


def _single_linkage(d: np.ndarray) -> np.ndarray:
    """Sorted-MST construction; ties broken by smallest (i, j) pair."""
    n = d.shape[0]
    edges = sorted(_mst_edges(d))
    cluster_of = list(range(n))           # leaf -> current cluster id
    parent = list(range(n))               # union-find over leaves

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    sizes = {i: 1 for i in range(n)}
    merges = np.zeros((n - 1, 4))
    for k, (w, i, j) in enumerate(edges):
        ri, rj = find(i), find(j)
        ca, cb = cluster_of[ri], cluster_of[rj]
        left, right = min(ca, cb), max(ca, cb)
        size = sizes[ca] + sizes[cb]
        merges[k] = (left, right, w, size)
        parent[rj] = ri
        new_id = n + k
        cluster_of[ri] = new_id
        sizes[new_id] = size
    return merges


def _ward_linkage(d: np.ndarray) -> np.ndarray:
    """Global-minimum agglomeration with the Lance-Williams ward update
    applied to squared distances."""
    n = d.shape[0]
    d2 = d.astype(np.float64) ** 2
    active = list(range(n))               # positions into the working matrix
    ids = list(range(n))
    sizes = [1.0] * n
    work = d2.copy()
    np.fill_diagonal(work, np.inf)
    merges = np.zeros((n - 1, 4))
    alive = np.ones(n, dtype=bool)

    for k in range(n - 1):
        sub = work[np.ix_(alive, alive)]
        flat = int(np.argmin(sub))
        rows = np.flatnonzero(alive)
        a_pos, b_pos = rows[flat // sub.shape[0]], rows[flat % sub.shape[0]]
        if a_pos > b_pos:
            a_pos, b_pos = b_pos, a_pos
        ca, cb = ids[a_pos], ids[b_pos]
        sa, sb = sizes[a_pos], sizes[b_pos]
        dab = work[a_pos, b_pos]
        left, right = min(ca, cb), max(ca, cb)
        merges[k] = (left, right, np.sqrt(dab), sa + sb)

        # Lance-Williams ward update into position a_pos
        for c_pos in rows:
            if c_pos == a_pos or c_pos == b_pos:
                continue
            sc = sizes[c_pos]
            new = ((sa + sc) * work[a_pos, c_pos]
                   + (sb + sc) * work[b_pos, c_pos]
                   - sc * dab) / (sa + sb + sc)
            work[a_pos, c_pos] = new
            work[c_pos, a_pos] = new
        alive[b_pos] = False
        ids[a_pos] = n + k
        sizes[a_pos] = sa + sb
    return merges


def linkage_matrix(c, method: str = "single") -> LinkageTree:
    """Agglomerative clustering of the correlation distance matrix."""
    v = _values(c)
    n = v.shape[0]
    if n < 2:
        raise MetricError("linkage needs at least 2 assets")
    d = correlation_distance(v)
    if method == "single":
        merges = _single_linkage(d)
    elif method == "ward":
        merges = _ward_linkage(d)
    else:
        raise MetricError(f"unknown linkage method {method!r}; use 'single' or 'ward'")
    return LinkageTree(merges=merges, n_leaves=n, method=method)


def cophenetic_corr(c, method: str = "single") -> float:
    """Pearson correlation between condensed correlation distances and the
    cophenetic distances of the dendrogram."""
    v = _values(c)
    d_vec = condensed(correlation_distance(v))
    coph_vec = condensed(linkage_matrix(v, method).cophenetic_matrix())
    if np.ptp(d_vec) == 0.0 or np.ptp(coph_vec) == 0.0:
        raise MetricError(
            "cophenetic correlation undefined: zero variance in the "
            "distance or cophenetic vector")
    return float(np.corrcoef(d_vec, coph_vec)[0, 1])


def perron_frob_sum_neg(c) -> float:
    """Negative mass of the top eigenvector (unit 2-norm), oriented to a
    non-negative entry sum, scaled by n for cross-size comparability."""
    v = _values(c)
    lam, vec = np.linalg.eigh(v)
    top = vec[:, -1]
    s = top.sum()
    if s < 0:
        top = -top
    elif s == 0:
        nz = np.flatnonzero(top)
        if nz.size and top[nz[0]] < 0:
            top = -top
    return float(v.shape[0] * np.abs(np.minimum(top, 0.0)).sum())


def power_eigen_exponent(c, eig_floor: float = 1e-10) -> float:
    """Negated OLS slope of log eigenvalue against log rank, ranks >= 2.

    Rank 1 (the market mode) is excluded; eigenvalues at or below
    ``eig_floor`` are dropped before fitting.
    """
    v = _values(c)
    if v.shape[0] < 4:
        raise MetricError("power_eigen_exponent needs at least 4 assets")
    lam = np.sort(np.linalg.eigvalsh(v))[::-1]
    lam = lam[lam > eig_floor]
    if lam.size < 3:
        raise MetricError(
            f"power_eigen_exponent needs >= 3 usable eigenvalues, got {lam.size}")
    ranks = np.arange(1, lam.size + 1)
    x = np.log(ranks[1:].astype(np.float64))
    y = np.log(lam[1:])
    slope = np.polyfit(x, y, 1)[0]
    return float(-slope)


# ---------------------------------------------------------------------------
# per-matrix vector and collection summary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricVector:
    mean_correl: float
    eigen_gini: float
    coph_corr_single: Optional[float]
    coph_corr_ward: Optional[float]
    perron_frob_sum_neg: float
    power_eigen_exponent: float

    def get(self, name: str) -> Optional[float]:
        return getattr(self, name)


@dataclass(frozen=True)
class MetricSummary:
    n_matrices: int
    means: dict[str, float]
    stds: dict[str, float]
    coph_skipped: dict[str, int]        # per linkage method


def metric_vector(c) -> MetricVector:
    """All six metrics for one matrix; degenerate cophenetic values are None."""
    v = _values(c)

    def _coph(method):
        try:
            val = cophenetic_corr(v, method)
        except MetricError:
            return None
        if not -1.0 - 1e-9 <= val <= 1.0 + 1e-9:
            raise MetricError(f"cophenetic correlation {val} outside [-1, 1]")
        return val

    return MetricVector(
        mean_correl=mean_correl(v),
        eigen_gini=eigen_gini(v),
        coph_corr_single=_coph("single"),
        coph_corr_ward=_coph("ward"),
        perron_frob_sum_neg=perron_frob_sum_neg(v),
        power_eigen_exponent=power_eigen_exponent(v),
    )


def summarize(matrices: Sequence) -> MetricSummary:
    """Per-metric mean and (population) standard deviation over a collection.

    Matrices whose cophenetic correlation is degenerate are skipped for that
    column only, with the count reported.
    """
    matrices = list(matrices)
    if not matrices:
        raise MetricError("summarize needs a non-empty collection")
    vectors = [metric_vector(m) for m in matrices]

    means: dict[str, float] = {}
    stds: dict[str, float] = {}
    skipped = {"single": 0, "ward": 0}
    for name in METRIC_NAMES:
        vals = [vec.get(name) for vec in vectors]
        present = np.array([x for x in vals if x is not None], dtype=np.float64)
        if name == "coph_corr_single":
            skipped["single"] = len(vals) - present.size
        elif name == "coph_corr_ward":
            skipped["ward"] = len(vals) - present.size
        if present.size == 0:
            means[name] = float("nan")
            stds[name] = float("nan")
        else:
            means[name] = float(present.mean())
            stds[name] = float(present.std(ddof=0))
    return MetricSummary(n_matrices=len(matrices), means=means, stds=stds,
                         coph_skipped=skipped)


def write_metric_table(path: str | Path,
                       summaries: dict[str, MetricSummary]) -> None:
    """CSV with one row per dataset label and mean/std columns per metric."""
    header = ["dataset", "n_matrices"]
    for name in METRIC_NAMES:
        header += [f"{name}_mean", f"{name}_std"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for label, s in summaries.items():
            row = [label, s.n_matrices]
            for name in METRIC_NAMES:
                row += [f"{s.means[name]:.6f}", f"{s.stds[name]:.6f}"]
            writer.writerow(row)
