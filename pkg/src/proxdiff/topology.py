"""Clustered network topology and combination-weight construction.

Nodes are grouped into clusters; each cluster's induced subgraph must be
connected.  Neighborhoods always include the node itself.  Combination
weights follow the usual diffusion conventions: ``c[l, k]`` weights node
``l``'s raw data in node ``k``'s adaptation (rows of ``c`` sum to one on
intra-cluster support), ``a[l, k]`` weights node ``l``'s intermediate
estimate in node ``k``'s combination (columns of ``a`` sum to one on
intra-cluster support), and ``rho[k, l]`` sets the strength of the
inter-cluster coupling, symmetrized into ``p``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

_SUM_TOL = 1e-9


@dataclass
class ClusteredTopology:
    """Undirected graph with a cluster partition.

    ``edges`` stores distinct node pairs only; self-loops are implicit
    (every node neighbors itself).  Cluster ids are dense ints 0..Q-1.
    Treat instances as immutable after construction.
    """

    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    cluster_of: tuple[int, ...]
    _nbrs: list[list[int]] = field(init=False, repr=False)
    _extra_arrays: tuple = field(init=False, repr=False, default=None)

    def __post_init__(self):
        n = self.n_nodes
        if len(self.cluster_of) != n:
            raise InvalidInput(
                f"cluster map covers {len(self.cluster_of)} of {n} nodes"
            )
        canon = set()
        for i, j in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidInput(f"edge ({i}, {j}) references unknown node")
            if i != j:
                canon.add((min(i, j), max(i, j)))
        self.edges = tuple(sorted(canon))
        self.cluster_of = tuple(int(q) for q in self.cluster_of)
        nbrs = [[] for _ in range(n)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        self._nbrs = [sorted(v) for v in nbrs]

    @classmethod
    def from_clusters(cls, clusters, edges) -> "ClusteredTopology":
        """Build from explicit per-cluster node lists (labels normalized)."""
        seen = {}
        for q, members in enumerate(clusters):
            for node in members:
                node = int(node)
                if node in seen:
                    raise InvalidInput(f"node {node} appears in more than one cluster")
                seen[node] = q
        n = len(seen)
        if sorted(seen) != list(range(n)):
            missing = sorted(set(range(n)) - set(seen))
            raise InvalidInput(f"node ids must be dense 0..N-1; missing {missing}")
        return cls(n, tuple((int(i), int(j)) for i, j in edges),
                   tuple(seen[k] for k in range(n)))

    @property
    def n_clusters(self) -> int:
        return max(self.cluster_of) + 1 if self.cluster_of else 0

    def cluster_members(self, q: int) -> list[int]:
        return [k for k in range(self.n_nodes) if self.cluster_of[k] == q]

    def cluster_sizes(self) -> np.ndarray:
        sizes = np.zeros(self.n_clusters, dtype=int)
        for q in self.cluster_of:
            sizes[q] += 1
        return sizes

    def neighbors(self, k: int) -> list[int]:
        """All neighbors of k, including k itself."""
        return sorted(self._nbrs[k] + [k])

    def intra_neighbors(self, k: int) -> list[int]:
        """Neighbors of k (including k) inside k's cluster."""
        q = self.cluster_of[k]
        return [l for l in self.neighbors(k) if self.cluster_of[l] == q]

    def extra_neighbors(self, k: int) -> list[int]:
        """Neighbors of k outside k's cluster (never contains k)."""
        q = self.cluster_of[k]
        return [l for l in self._nbrs[k] if self.cluster_of[l] != q]

    def extra_edge_arrays(self):
        """Directed inter-cluster edge list as (k_idx, l_idx) arrays."""
        if self._extra_arrays is None:
            ks, ls = [], []
            for k in range(self.n_nodes):
                for l in self.extra_neighbors(k):
                    ks.append(k)
                    ls.append(l)
            self._extra_arrays = (np.asarray(ks, dtype=int), np.asarray(ls, dtype=int))
        return self._extra_arrays

    def cluster_connected(self, q: int) -> bool:
        members = self.cluster_members(q)
        if not members:
            return False
        inside = set(members)
        seen = {members[0]}
        queue = deque([members[0]])
        while queue:
            k = queue.popleft()
            for l in self._nbrs[k]:
                if l in inside and l not in seen:
                    seen.add(l)
                    queue.append(l)
        return len(seen) == len(members)


@dataclass
class CombinationWeights:
    """Raw-data weights ``c``, estimate weights ``a``, coupling ``rho``/``p``."""

    c: np.ndarray
    a: np.ndarray
    rho: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        shapes = {m.shape for m in (self.c, self.a, self.rho, self.p)}
        if len(shapes) != 1 or any(len(s) != 2 or s[0] != s[1] for s in shapes):
            raise InvalidInput("weight matrices must share one square shape")

    @classmethod
    def from_rho(cls, c, a, rho) -> "CombinationWeights":
        rho = np.asarray(rho, dtype=float)
        return cls(np.asarray(c, dtype=float), np.asarray(a, dtype=float),
                   rho, (rho + rho.T) / 2.0)


def uniform_weights(topo: ClusteredTopology) -> CombinationWeights:
    """Averaging weights: uniform over intra-cluster neighborhoods for ``c``
    and ``a``, uniform over extra-cluster neighbors for ``rho`` (zero row
    where a node has none, making the prox step an identity there)."""
    n = topo.n_nodes
    c = np.zeros((n, n))
    a = np.zeros((n, n))
    rho = np.zeros((n, n))
    for k in range(n):
        intra = topo.intra_neighbors(k)
        c[k, intra] = 1.0 / len(intra)   # row k: data weights node k hands out
        a[intra, k] = 1.0 / len(intra)   # column k: estimates node k pulls in
        extra = topo.extra_neighbors(k)
        if extra:
            rho[k, extra] = 1.0 / len(extra)
    return CombinationWeights.from_rho(c, a, rho)


@dataclass(frozen=True)
class Violation:
    rule: str
    where: tuple
    detail: str = ""

    def __str__(self):
        loc = ",".join(str(w) for w in self.where)
        return f"{self.rule}({loc}){': ' + self.detail if self.detail else ''}"


def validate(topo: ClusteredTopology, weights: CombinationWeights | None = None):
    """Check all topology and weight invariants; violations are data, not errors."""
    out = []
    q_ids = sorted(set(topo.cluster_of))
    if q_ids != list(range(len(q_ids))):
        out.append(Violation("cluster_ids_not_dense", (), str(q_ids)))
    for q in q_ids:
        if not topo.cluster_connected(q):
            out.append(Violation("cluster_disconnected", (q,)))
    if weights is None:
        return out

    n = topo.n_nodes
    intra = np.zeros((n, n), dtype=bool)
    extra = np.zeros((n, n), dtype=bool)
    for k in range(n):
        intra[k, topo.intra_neighbors(k)] = True
        extra[k, topo.extra_neighbors(k)] = True

    for name, m in (("c", weights.c), ("a", weights.a), ("rho", weights.rho)):
        for k, l in zip(*np.nonzero(m < 0)):
            out.append(Violation(f"negative_{name}", (int(k), int(l))))
    for l in range(n):
        row = weights.c[l]
        if abs(row.sum() - 1.0) > _SUM_TOL:
            out.append(Violation("row_stochasticity", (l,), f"sum={row.sum():.12g}"))
        for k in np.nonzero(row)[0]:
            if not intra[l, k]:
                out.append(Violation("data_support", (l, int(k))))
    for k in range(n):
        col = weights.a[:, k]
        if abs(col.sum() - 1.0) > _SUM_TOL:
            out.append(
                Violation("column_stochasticity", (k,), f"sum={col.sum():.12g}")
            )
        for l in np.nonzero(col)[0]:
            if not intra[k, int(l)]:
                out.append(Violation("estimate_support", (int(l), k)))
    for k, l in zip(*np.nonzero(weights.rho)):
        if not extra[k, l]:
            out.append(Violation("regularizer_support", (int(k), int(l))))
    if not np.allclose(weights.p, weights.p.T, rtol=0, atol=1e-12):
        out.append(Violation("p_not_symmetric", ()))
    return out
