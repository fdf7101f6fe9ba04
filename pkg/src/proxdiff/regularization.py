"""Sparsity coregularizers: reweighting state, sparsity measure, adaptive
coupling factors, and assembly of the per-entry absolute-value sums fed to
the proximal step.

Two regularizer kinds are supported: the plain l1 norm of inter-cluster
estimate differences, and its reweighted variant where entry ``m`` of edge
``(k, l)`` carries the weight ``1 / (epsilon + |delta_m|)`` with ``delta``
the latest difference estimate.  The reweighting uses the difference from
the *previous* iteration: the engine passes last iteration's combined
estimates (or the current iterates, selectable via ``reweight_source``).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidDimension, InvalidInput
from .prox import WeightedAbsSum
from .topology import ClusteredTopology

KINDS = ("l1", "reweighted_l1")
REWEIGHT_SOURCES = ("phi", "w")


@dataclass(frozen=True)
class RegularizerSpec:
    """Configuration of the inter-cluster coregularizer.

    ``eta`` is the global strength (0 disables the prox step entirely),
    ``epsilon`` the reweighting floor, ``adaptive_p`` switches the coupling
    factors from the static topology-derived values to the per-iteration
    sparsity-driven rule scaled by ``adaptive_p_scale``.
    """

    kind: str = "l1"
    eta: float = 0.0
    epsilon: float = 0.1
    adaptive_p: bool = False
    adaptive_p_scale: float = 1.0
    reweight_source: str = "phi"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown regularizer kind {self.kind!r}")
        if self.eta < 0:
            raise InvalidInput(f"eta must be >= 0, got {self.eta}")
        if self.epsilon <= 0:
            raise InvalidInput(f"epsilon must be > 0, got {self.epsilon}")
        if self.adaptive_p_scale <= 0:
            raise InvalidInput("adaptive_p_scale must be > 0")
        if self.reweight_source not in REWEIGHT_SOURCES:
            raise InvalidInput(f"unknown reweight_source {self.reweight_source!r}")


@dataclass(frozen=True)
class ReweightState:
    """Per-edge reweighting weights and difference estimates.

    Rows of ``alpha``/``delta`` follow ``edges``, the directed inter-cluster
    edge list (k, l) with l an extra-cluster neighbor of k, ordered by k then
    l.  ``rows_of[k]`` gives the row slice for node k's edges, aligned with
    ``ClusteredTopology.extra_neighbors(k)``.
    """

    edges: tuple[tuple[int, int], ...]
    alpha: np.ndarray  # (E, M)
    delta: np.ndarray  # (E, M)

    @classmethod
    def initial(cls, topo: ClusteredTopology, m: int, spec: RegularizerSpec):
        k_idx, l_idx = topo.extra_edge_arrays()
        e = len(k_idx)
        fill = 1.0 / spec.epsilon if spec.kind == "reweighted_l1" else 1.0
        return cls(
            tuple(zip(k_idx.tolist(), l_idx.tolist())),
            np.full((e, m), fill),
            np.zeros((e, m)),
        )

    def row_index(self) -> dict:
        return {edge: i for i, edge in enumerate(self.edges)}

    def alpha_for(self, k: int, l: int) -> np.ndarray:
        return self.alpha[self.row_index()[(k, l)]]


def update_alpha(
    state: ReweightState, vectors: np.ndarray, spec: RegularizerSpec
) -> ReweightState:
    """Refresh difference estimates and entrywise weights from ``vectors``.

    ``vectors`` holds one M-vector per node; the new ``delta`` for edge
    (k, l) is ``vectors[k] - vectors[l]`` and the new weight is
    ``1 / (epsilon + |delta|)``.  For the plain l1 kind this is the identity
    (weights stay at one).
    """
    if spec.kind == "l1":
        return state
    if not state.edges:
        return state
    k_idx = np.fromiter((k for k, _ in state.edges), dtype=int)
    l_idx = np.fromiter((l for _, l in state.edges), dtype=int)
    delta = vectors[k_idx] - vectors[l_idx]
    alpha = 1.0 / (spec.epsilon + np.abs(delta))
    return replace(state, alpha=alpha, delta=delta)


def sparsity_measure(d) -> float:
    """Ratio-based sparsity score in [0, 1].

    Equals 1 when a single entry carries all the mass, 0 when every entry has
    the same magnitude.  The all-zero vector is scored 1: identical vectors
    warrant maximal cooperation.  Requires dimension >= 2.
    """
    d = np.asarray(d, dtype=float)
    m = d.size
    if m < 2:
        raise InvalidDimension(f"sparsity measure needs dimension >= 2, got {m}")
    l2 = float(np.linalg.norm(d))
    if l2 <= 1e-12:
        return 1.0
    l1 = float(np.abs(d).sum())
    root = np.sqrt(m)
    return float(m / (m - root) * (1.0 - l1 / (root * l2)))


def adaptive_p(
    phi: np.ndarray, topo: ClusteredTopology, spec: RegularizerSpec
) -> np.ndarray:
    """Coupling factors from the sparsity of current estimate differences.

    ``p[k, l] = scale * sparsity_measure(phi_k - phi_l)`` on inter-cluster
    edges, zero elsewhere.  Symmetric because the measure is even; clamped at
    zero against the measure's negative rounding slack.
    """
    n = topo.n_nodes
    m = phi.shape[1]
    if m < 2:
        raise InvalidDimension(f"adaptive coupling needs dimension >= 2, got {m}")
    p = np.zeros((n, n))
    k_idx, l_idx = topo.extra_edge_arrays()
    if len(k_idx) == 0:
        return p
    diff = phi[k_idx] - phi[l_idx]
    l2 = np.linalg.norm(diff, axis=1)
    l1 = np.abs(diff).sum(axis=1)
    root = np.sqrt(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = m / (m - root) * (1.0 - l1 / (root * l2))
    xi = np.where(l2 <= 1e-12, 1.0, xi)
    p[k_idx, l_idx] = spec.adaptive_p_scale * np.maximum(xi, 0.0)
    return p


def build_prox_functions(
    k: int,
    phi: np.ndarray,
    p: np.ndarray,
    reweight: ReweightState | None = None,
) -> list[WeightedAbsSum]:
    """Per-entry absolute-value sums for node k's proximal step.

    Entry m gets one term per coupled neighbor l: breakpoint ``phi[l, m]``
    with weight ``p[k, l] * alpha[(k, l), m]`` (alpha one without a reweight
    state).  Zero-weight terms drop out and equal breakpoints merge during
    canonicalization.
    """
    neighbors = np.nonzero(p[k])[0]
    m = phi.shape[1]
    if len(neighbors) == 0:
        empty = WeightedAbsSum.from_terms([])
        return [empty] * m
    if reweight is not None:
        index = reweight.row_index()
        alpha = np.stack([reweight.alpha[index[(k, int(l))]] for l in neighbors])
    else:
        alpha = np.ones((len(neighbors), m))
    weights = p[k, neighbors][:, None] * alpha
    return [
        WeightedAbsSum.from_terms(zip(phi[neighbors, m_i], weights[:, m_i]))
        for m_i in range(m)
    ]
