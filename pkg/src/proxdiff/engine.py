"""Multitask diffusion recursion: adapt, combine, then a proximal step.

Every iteration runs in strict synchronous phases over the whole network:

1. adapt      -- stochastic-gradient step on intra-cluster raw data,
2. combine    -- convex combination of intra-cluster intermediates,
3. reweight   -- refresh per-edge weights / adaptive coupling factors,
4. prox       -- exact componentwise prox pulling toward extra-cluster
                 neighbors' combined estimates.

Each phase reads only the previous phase's completed outputs, so results do
not depend on any per-node execution order.  Per-node functions
(:func:`adapt`, :func:`combine`, ...) express the same arithmetic one node
at a time and are cross-checked against the vectorized path in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceDetected, InvalidInput
from .prox import prox_shift
from .regularization import (
    RegularizerSpec,
    ReweightState,
    adaptive_p,
    update_alpha,
)
from .topology import ClusteredTopology, CombinationWeights

FAMILIES = (
    "non_cooperative_lms",
    "regularized_lms",
    "diffusion",
    "proximal_diffusion",
)
_IDENTITY_FAMILIES = ("non_cooperative_lms", "regularized_lms")
_UNREGULARIZED_FAMILIES = ("non_cooperative_lms", "diffusion")


@dataclass(frozen=True)
class AlgorithmVariant:
    """One algorithm in the comparison set.

    ``non_cooperative_lms`` and ``regularized_lms`` replace both combination
    matrices by the identity; ``non_cooperative_lms`` and ``diffusion``
    additionally require a zero regularization strength (the prox step is
    then the identity).
    """

    name: str
    family: str
    mu: float | np.ndarray
    regularizer: RegularizerSpec = RegularizerSpec()

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInput(f"unknown family {self.family!r}")
        if self.family in _UNREGULARIZED_FAMILIES and self.regularizer.eta != 0:
            raise InvalidInput(
                f"{self.family} requires eta == 0, got {self.regularizer.eta}"
            )

    @property
    def identity_combiners(self) -> bool:
        return self.family in _IDENTITY_FAMILIES

    @property
    def uses_prox(self) -> bool:
        return self.regularizer.eta > 0


@dataclass
class NetworkState:
    """Stacked per-node state: current estimates and the two intermediates."""

    w: np.ndarray    # (N, M)
    psi: np.ndarray  # (N, M)
    phi: np.ndarray  # (N, M)
    reweight: ReweightState
    prev_phi: np.ndarray | None = None
    iteration: int = 0


# ---------------------------------------------------------------------------
# per-node operations (reference semantics, used directly in tests)


def adapt(k, w_k, x, d, c_col, mu_k):
    """Gradient step on the c-weighted intra-cluster data for node k."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != len(w_k):
        raise InvalidInput("regressor block does not match estimate dimension")
    resid = d - x @ w_k
    return w_k + mu_k * ((c_col * resid) @ x)


def adapt_block(k, u_k, phi_hat_k, r_k, mu_k):
    """Least-mean-squares step on node k's censored regression matrix."""
    phi_hat_k = np.asarray(phi_hat_k, dtype=float)
    if phi_hat_k.ndim != 2 or phi_hat_k.shape[1] != len(u_k):
        raise InvalidInput("regression matrix does not match estimate dimension")
    if phi_hat_k.shape[0] != len(r_k):
        raise InvalidInput("measurement length does not match regression matrix")
    return u_k + mu_k * (phi_hat_k.T @ (r_k - phi_hat_k @ u_k))


def combine(k, psi_all, a_col):
    """Convex combination of intra-cluster intermediates for node k."""
    return a_col @ psi_all


def prox_step(k, phi_all, p, eta, mu_k, reweight: ReweightState | None = None):
    """Componentwise prox of the weighted absolute-value sum at node k."""
    lam = eta * mu_k
    neighbors = np.nonzero(p[k])[0]
    if lam == 0.0 or len(neighbors) == 0:
        return phi_all[k].copy()
    if reweight is not None:
        index = reweight.row_index()
        alpha = np.stack([reweight.alpha[index[(k, int(l))]] for l in neighbors])
    else:
        alpha = np.ones((len(neighbors), phi_all.shape[1]))
    weights = p[k, neighbors][:, None] * alpha
    return phi_all[k] - prox_shift(phi_all[neighbors], weights, lam, phi_all[k])


# ---------------------------------------------------------------------------
# vectorized network iteration


@dataclass
class VariantContext:
    """Prepared, immutable quantities one variant needs every iteration."""

    variant: AlgorithmVariant
    weights: CombinationWeights
    topo: ClusteredTopology
    mu: np.ndarray = field(init=False)
    lam: np.ndarray = field(init=False)
    a: np.ndarray | None = field(init=False)
    c: np.ndarray | None = field(init=False)
    extra: list = field(init=False)
    alpha_rows: list = field(init=False)

    def __post_init__(self):
        n = self.topo.n_nodes
        self.mu = np.broadcast_to(np.asarray(self.variant.mu, dtype=float), (n,)).copy()
        if np.any(self.mu < 0):
            raise InvalidInput("step sizes must be nonnegative")
        self.lam = self.variant.regularizer.eta * self.mu
        identity = self.variant.identity_combiners
        self.a = None if identity else self.weights.a
        self.c = None if identity else self.weights.c
        self.extra = [np.asarray(self.topo.extra_neighbors(k), dtype=int)
                      for k in range(n)]
        k_idx, _ = self.topo.extra_edge_arrays()
        rows = [[] for _ in range(n)]
        for row, k in enumerate(k_idx):
            rows[k].append(row)
        self.alpha_rows = [np.asarray(r, dtype=int) for r in rows]

    def initial_state(self, m: int) -> NetworkState:
        n = self.topo.n_nodes
        return NetworkState(
            w=np.zeros((n, m)),
            psi=np.zeros((n, m)),
            phi=np.zeros((n, m)),
            reweight=ReweightState.initial(self.topo, m, self.variant.regularizer),
        )


def _adapt_all(ctx: VariantContext, w: np.ndarray, batch) -> np.ndarray:
    x, d = batch
    if x.ndim == 2:  # plain regressor vectors
        if ctx.c is None:
            resid = d - (x * w).sum(axis=1)
            return w + ctx.mu[:, None] * x * resid[:, None]
        resid = d[:, None] - x @ w.T  # resid[l, k] = d_l - x_l . w_k
        return w + ctx.mu[:, None] * ((ctx.c * resid).T @ x)
    # block regression matrices: no raw-data sharing (c is the identity)
    pred = np.matmul(x, w[:, :, None])[:, :, 0]
    grad = np.matmul(x.transpose(0, 2, 1), (d - pred)[:, :, None])[:, :, 0]
    return w + ctx.mu[:, None] * grad


def _combine_all(ctx: VariantContext, psi: np.ndarray) -> np.ndarray:
    return psi if ctx.a is None else ctx.a.T @ psi


def _prox_all(ctx: VariantContext, phi: np.ndarray, p: np.ndarray,
              alpha: np.ndarray):
    """Prox phase for all nodes; returns (new w, squared shift norms)."""
    w_new = phi.copy()
    shift_sq = np.zeros(len(phi))
    for k, neighbors in enumerate(ctx.extra):
        if len(neighbors) == 0 or ctx.lam[k] == 0.0:
            continue
        weights = p[k, neighbors][:, None] * alpha[ctx.alpha_rows[k]]
        shift = prox_shift(phi[neighbors], weights, ctx.lam[k], phi[k])
        w_new[k] = phi[k] - shift
        shift_sq[k] = float(shift @ shift)
    return w_new, shift_sq


def run_iteration(ctx: VariantContext, state: NetworkState, batch):
    """Advance the whole network one iteration under strict phase barriers.

    Returns ``(new_state, p, shift_sq)`` where ``p`` is the coupling matrix
    the prox phase used (None when inactive) and ``shift_sq`` the per-node
    squared norms of the prox shift, for bound tracking.
    """
    spec = ctx.variant.regularizer
    psi = _adapt_all(ctx, state.w, batch)
    phi = _combine_all(ctx, psi)

    reweight = state.reweight
    if ctx.variant.uses_prox and spec.kind == "reweighted_l1":
        if spec.reweight_source == "w":
            reweight = update_alpha(reweight, state.w, spec)
        elif state.prev_phi is not None:
            reweight = update_alpha(reweight, state.prev_phi, spec)
        # first iteration with source "phi": keep the floor-valued weights

    if ctx.variant.uses_prox:
        p = (adaptive_p(phi, ctx.topo, spec) if spec.adaptive_p
             else ctx.weights.p)
        w_new, shift_sq = _prox_all(ctx, phi, p, reweight.alpha)
    else:
        p = None
        w_new, shift_sq = phi.copy(), np.zeros(len(phi))

    finite = np.isfinite(w_new).all(axis=1)
    if not finite.all():
        raise DivergenceDetected(state.iteration, int(np.argmin(finite)))

    new_state = NetworkState(
        w=w_new, psi=psi, phi=phi, reweight=reweight,
        prev_phi=phi, iteration=state.iteration + 1,
    )
    return new_state, p, shift_sq


@dataclass
class RunRecord:
    """Per-run summaries a single variant produced on one data stream.

    ``cluster_entry_sq[i, q, m]`` is the cluster-q average of the squared
    entry-m estimation error after processing batch i, measured against the
    optimum that generated batch i.  ``trailing_err_sum`` accumulates raw
    error vectors over the trailing window for bias estimation.
    """

    variant: str
    cluster_entry_sq: np.ndarray          # (T, Q, M)
    trailing_err_sum: np.ndarray          # (N, M)
    trailing_count: int
    max_shift_ratio: float
    diverged: tuple[int, int] | None = None

    @property
    def ok(self) -> bool:
        return self.diverged is None


def simulate(variant: AlgorithmVariant, weights: CombinationWeights,
             topo: ClusteredTopology, run_data, window: int = 50) -> RunRecord:
    """Run one variant over one run's data stream and summarize it.

    On divergence the record is returned with ``diverged`` set; aggregation
    excludes such runs entirely rather than averaging garbage.
    """
    ctx = VariantContext(variant, weights, topo)
    m = run_data.dim
    t = run_data.n_iterations
    q = topo.n_clusters
    n = topo.n_nodes
    spec = variant.regularizer

    members = np.zeros((q, n))
    for k, qk in enumerate(topo.cluster_of):
        members[qk, k] = 1.0
    members /= members.sum(axis=1, keepdims=True)

    sqrt_m = np.sqrt(m)
    eps_scale = spec.epsilon if spec.kind == "reweighted_l1" else 1.0
    trailing_start = max(0, t - window)

    state = ctx.initial_state(m)
    cluster_entry_sq = np.zeros((t, q, m))
    trailing_err_sum = np.zeros((n, m))
    trailing_count = 0
    max_ratio = 0.0

    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(t):
            try:
                state, p, shift_sq = run_iteration(ctx, state, run_data.batch(i))
            except DivergenceDetected as div:
                return RunRecord(variant.name, cluster_entry_sq, trailing_err_sum,
                                 trailing_count, max_ratio,
                                 diverged=(div.iteration, div.node))
            err = state.w - run_data.true_w_nodes(i, topo.cluster_of)
            cluster_entry_sq[i] = members @ (err * err)
            if i >= trailing_start:
                trailing_err_sum += err
                trailing_count += 1
            if variant.uses_prox and p is not None:
                s_vec = p.sum(axis=1)
                denom = ctx.lam * s_vec * sqrt_m / eps_scale
                active = denom > 0
                if active.any():
                    ratios = np.sqrt(shift_sq[active]) / denom[active]
                    max_ratio = max(max_ratio, float(ratios.max()))

    return RunRecord(variant.name, cluster_entry_sq, trailing_err_sum,
                     trailing_count, max_ratio)


def simulate_all(variants, weights, topo, run_data, window: int = 50):
    """All variants on one shared data stream (paired comparisons)."""
    return {v.name: simulate(v, weights, topo, run_data, window) for v in variants}
