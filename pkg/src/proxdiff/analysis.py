"""Stability conditions, bias bounds, and empirical performance metrics.

The step-size condition bounds each node's step by twice the inverse of the
largest eigenvalue of its c-weighted neighborhood covariance.  The mean
error dynamics are governed by the block matrix ``A^T (I - M R)``; its
induced block-maximum norm is evaluated as the maximum over block rows of
the summed spectral norms of the blocks, which for this structure reduces to
``max_k sum_l a[l, k] * rho(I - mu_l * Rbar_l)``.

MSD aggregation consumes the per-run records the engine emits: diverged runs
are excluded and counted, the rest are averaged per iteration, and
steady-state summaries are means over the trailing window of each schedule
stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput, NoData
from .topology import ClusteredTopology, CombinationWeights

DB_FLOOR = -320.0
_LINEAR_FLOOR = 10.0 ** (DB_FLOOR / 10.0)


def to_db(linear):
    """10 log10 with a -320 dB floor so emitted tables stay finite."""
    linear = np.asarray(linear, dtype=float)
    out = 10.0 * np.log10(np.maximum(linear, _LINEAR_FLOOR))
    return float(out) if out.ndim == 0 else out


def block_max_norm(vectors: np.ndarray) -> float:
    """Largest per-node Euclidean norm of a stacked (N, M) block vector."""
    return float(np.linalg.norm(vectors, axis=1).max())


def _as_covariances(r_x, n: int):
    """Normalize per-node covariance input: scalars (isotropic) or matrices."""
    out = []
    for k in range(n):
        r = r_x[k]
        if np.ndim(r) == 0:
            if r <= 0:
                raise InvalidInput(f"variance at node {k} must be positive")
            out.append(float(r))
        else:
            r = np.asarray(r, dtype=float)
            if not np.allclose(r, r.T, atol=1e-12):
                raise InvalidInput(f"covariance at node {k} is not symmetric")
            eigs = np.linalg.eigvalsh(r)
            if eigs[0] < -1e-12:
                raise InvalidInput(f"covariance at node {k} is not PSD")
            out.append(r)
    return out


def _neighborhood_covariances(topo, c, r_x):
    """Rbar_k = sum_l c[l, k] R_l over k's intra-cluster neighborhood."""
    covs = _as_covariances(r_x, topo.n_nodes)
    out = []
    for k in range(topo.n_nodes):
        weights = c[:, k]
        if all(np.ndim(r) == 0 for r in covs):
            out.append(float(sum(weights[l] * covs[l] for l in range(topo.n_nodes))))
        else:
            m = next(np.shape(r)[0] for r in covs if np.ndim(r) > 0)
            acc = np.zeros((m, m))
            for l in range(topo.n_nodes):
                r = covs[l] if np.ndim(covs[l]) else covs[l] * np.eye(m)
                acc += weights[l] * r
            out.append(acc)
    return out


def step_size_bounds(topo: ClusteredTopology, c: np.ndarray, r_x) -> np.ndarray:
    """Per-node stable step-size upper bounds 2 / lambda_max(Rbar_k)."""
    bounds = np.empty(topo.n_nodes)
    for k, rbar in enumerate(_neighborhood_covariances(topo, c, r_x)):
        lam_max = rbar if np.ndim(rbar) == 0 else float(np.linalg.eigvalsh(rbar)[-1])
        if lam_max <= 0:
            raise InvalidInput(f"neighborhood covariance at node {k} is singular")
        bounds[k] = 2.0 / lam_max
    return bounds


def mean_dynamics_norm(topo, weights: CombinationWeights, mu, r_x) -> float:
    """Induced block-maximum norm of the mean-error transition matrix."""
    n = topo.n_nodes
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (n,))
    rbars = _neighborhood_covariances(topo, weights.c, r_x)
    spectral = np.empty(n)
    for l, rbar in enumerate(rbars):
        if np.ndim(rbar) == 0:
            spectral[l] = abs(1.0 - mu[l] * rbar)
        else:
            eigs = np.linalg.eigvalsh(rbar)
            spectral[l] = max(abs(1.0 - mu[l] * eigs[0]), abs(1.0 - mu[l] * eigs[-1]))
    return float((weights.a * spectral[:, None]).sum(axis=0).max())


@dataclass(frozen=True)
class BiasBounds:
    l1: float
    reweighted: float
    b_norm: float
    vacuous: bool


def bias_bound(weights: CombinationWeights, mu, eta: float, spec, m: int,
               topo: ClusteredTopology, r_x) -> BiasBounds:
    """Steady-state bias bounds for both regularizer kinds.

    ``eta * mu_max * s_max * sqrt(M) / (1 - bnorm)`` and its 1/epsilon-scaled
    analog.  When the transition norm is not below one the bound carries no
    information and is flagged vacuous (infinite) rather than extrapolated.
    """
    n = topo.n_nodes
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (n,))
    b_norm = mean_dynamics_norm(topo, weights, mu, r_x)
    s_max = float(weights.p.sum(axis=1).max())
    if eta == 0:
        return BiasBounds(0.0, 0.0, b_norm, b_norm >= 1.0)
    if b_norm >= 1.0:
        return BiasBounds(np.inf, np.inf, b_norm, True)
    l1 = eta * float(mu.max()) * s_max * np.sqrt(m) / (1.0 - b_norm)
    return BiasBounds(l1, l1 / spec.epsilon, b_norm, False)


@dataclass(frozen=True)
class StabilityReport:
    bounds: np.ndarray
    mu: np.ndarray
    ok: np.ndarray
    b_norm: float
    bias: BiasBounds

    @property
    def all_ok(self) -> bool:
        return bool(self.ok.all())


def stability_report(topo, weights, mu, r_x, eta: float, spec, m: int) -> StabilityReport:
    n = topo.n_nodes
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (n,)).copy()
    bounds = step_size_bounds(topo, weights.c, r_x)
    ok = (mu > 0) & (mu < bounds)
    bias = bias_bound(weights, mu, eta, spec, m, topo, r_x)
    return StabilityReport(bounds, mu, ok, bias.b_norm, bias)


# ---------------------------------------------------------------------------
# empirical metrics


@dataclass
class MsdCurves:
    """MC-averaged learning curves and stage-wise steady-state summaries."""

    iterations: np.ndarray
    network_linear: np.ndarray
    cluster_linear: dict = field(default_factory=dict)   # (cluster, subset) -> (T,)
    steady_state: dict = field(default_factory=dict)     # name -> per-stage means
    stage_starts: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=int))
    n_runs: int = 0
    n_effective: int = 0
    diverged: int = 0
    mean_error: np.ndarray | None = None                 # (N, M) trailing mean
    max_shift_ratio: float = 0.0

    @property
    def network_db(self) -> np.ndarray:
        return to_db(self.network_linear)


def _stage_bounds(stage_starts, t):
    starts = list(stage_starts) + [t]
    return [(int(starts[i]), int(min(starts[i + 1], t))) for i in range(len(starts) - 1)
            if starts[i] < t]


def _steady(curve, stage_starts, window):
    out = {}
    for s, (lo, hi) in enumerate(_stage_bounds(stage_starts, len(curve))):
        lo_w = max(lo, hi - window)
        seg = curve[lo_w:hi]
        seg = seg[~np.isnan(seg)]
        out[s] = float(seg.mean()) if seg.size else float("nan")
    return out


def network_msd(records, topo: ClusteredTopology, stage_starts, window: int = 50) -> MsdCurves:
    """Average the per-run records into network and per-cluster curves."""
    usable = [r for r in records if r.ok]
    if not usable:
        raise NoData("every Monte-Carlo run diverged")
    mean_sq = np.mean([r.cluster_entry_sq for r in usable], axis=0)  # (T, Q, M)
    sizes = topo.cluster_sizes()
    t = mean_sq.shape[0]
    per_cluster = mean_sq.sum(axis=2)                      # (T, Q)
    network = per_cluster @ sizes / sizes.sum()
    curves = MsdCurves(
        iterations=np.arange(t),
        network_linear=network,
        stage_starts=np.asarray(stage_starts, dtype=int),
        n_runs=len(records),
        n_effective=len(usable),
        diverged=len(records) - len(usable),
    )
    for q in range(topo.n_clusters):
        curves.cluster_linear[(q, "all")] = per_cluster[:, q]
    curves.steady_state["network"] = _steady(network, stage_starts, window)
    for q in range(topo.n_clusters):
        curves.steady_state[f"cluster{q}:all"] = _steady(
            per_cluster[:, q], stage_starts, window
        )
    counts = np.array([r.trailing_count for r in usable])
    if counts.min() > 0:
        total = np.sum([r.trailing_err_sum for r in usable], axis=0)
        curves.mean_error = total / counts.sum()
    curves.max_shift_ratio = max((r.max_shift_ratio for r in usable), default=0.0)
    return curves


def subset_schedules(schedule_w: np.ndarray):
    """Identical/distinct entry sets per stage, derived from the optima.

    ``schedule_w`` is (S, Q, M); an entry is identical at stage s when every
    cluster holds the same value there.
    """
    s, q, m = schedule_w.shape
    out = []
    for i in range(s):
        same = np.all(schedule_w[i] == schedule_w[i, 0][None, :], axis=0)
        out.append(
            {
                "identical": np.nonzero(same)[0],
                "distinct": np.nonzero(~same)[0],
            }
        )
    return out


def subset_msd(records, schedule_w: np.ndarray, topo: ClusteredTopology,
               stage_starts, window: int = 50, curves: MsdCurves | None = None) -> MsdCurves:
    """Entry-subset-restricted per-cluster curves (identical vs distinct).

    Stages with an empty subset yield NaN there (absent, not zero).
    """
    if curves is None:
        curves = network_msd(records, topo, stage_starts, window)
    usable = [r for r in records if r.ok]
    mean_sq = np.mean([r.cluster_entry_sq for r in usable], axis=0)
    t = mean_sq.shape[0]
    subsets = subset_schedules(schedule_w)
    bounds = _stage_bounds(stage_starts, t)
    for name in ("identical", "distinct"):
        restricted = np.full((t, topo.n_clusters), np.nan)
        for s, (lo, hi) in enumerate(bounds):
            entries = subsets[s][name]
            if entries.size:
                restricted[lo:hi] = mean_sq[lo:hi][:, :, entries].sum(axis=2)
        for q in range(topo.n_clusters):
            curves.cluster_linear[(q, name)] = restricted[:, q]
            curves.steady_state[f"cluster{q}:{name}"] = _steady(
                restricted[:, q], stage_starts, window
            )
    return curves


def restricted_error(records, topo: ClusteredTopology, cluster: int, entries,
                     window: int = 50) -> float:
    """Trailing-window mean squared error over an entry subset of one cluster."""
    usable = [r for r in records if r.ok]
    if not usable:
        raise NoData("every Monte-Carlo run diverged")
    mean_sq = np.mean([r.cluster_entry_sq for r in usable], axis=0)
    t = mean_sq.shape[0]
    seg = mean_sq[max(0, t - window):, cluster][:, list(entries)]
    return float(seg.sum(axis=1).mean())
