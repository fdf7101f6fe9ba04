"""Closed-form proximal operator of a weighted sum of shifted absolute values.

The target function is ``h(x) = sum_j c_j * |x - b_j|`` with positive weights
``c_j`` and strictly increasing breakpoints ``b_j``.  The minimizer of
``h(x) + (x - v)^2 / (2 * lam)`` is piecewise linear in ``v``: with the
breakpoints sorted, the real line splits into half-open cells on which the
prox is either an affine shift of ``v`` or pinned to one of the ``b_j``.

Three independent evaluation routes are provided and cross-checked by the
test suite:

* :func:`prox` walks the interval table and reports which cell ``v`` fell in,
* :func:`prox_subgradient` evaluates the compact half-difference formula for
  the subgradient ``G`` satisfying ``prox = v - lam * G``,
* :func:`prox_oracle` minimizes the objective numerically (grid scan plus
  ternary refinement, valid because the objective is strictly convex).

:func:`prox_shift` is a vectorized kernel computing ``v - prox`` for whole
arrays of instances at once; it is the hot path used by the diffusion engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, InvalidStepsize, InvalidWeight


@dataclass(frozen=True)
class WeightedAbsSum:
    """Canonical form of ``h(x) = sum_j weights[j] * |x - breakpoints[j]|``.

    Invariants: breakpoints strictly increasing, weights all positive.  The
    empty sum (``size == 0``) is allowed and represents the zero function.
    """

    breakpoints: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        c = np.asarray(self.weights, dtype=float)
        if b.ndim != 1 or c.ndim != 1 or b.shape != c.shape:
            raise InvalidInput("breakpoints and weights must be 1-d and equal length")
        if not (np.isfinite(b).all() and np.isfinite(c).all()):
            raise InvalidInput("breakpoints and weights must be finite")
        if np.any(c <= 0):
            raise InvalidWeight("weights must be strictly positive in canonical form")
        if b.size > 1 and not np.all(np.diff(b) > 0):
            raise InvalidInput("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "weights", c)

    @classmethod
    def from_terms(cls, terms) -> "WeightedAbsSum":
        """Canonicalize raw ``(b, c)`` pairs.

        Zero-weight terms are dropped and terms with exactly equal breakpoints
        are merged by summing their weights, which leaves the function
        unchanged.  Negative weights raise :class:`InvalidWeight`.
        """
        bs, cs = [], []
        for b, c in terms:
            b, c = float(b), float(c)
            if not (np.isfinite(b) and np.isfinite(c)):
                raise InvalidInput(f"non-finite term ({b}, {c})")
            if c < 0:
                raise InvalidWeight(f"negative weight {c} at breakpoint {b}")
            if c == 0.0:
                continue
            bs.append(b)
            cs.append(c)
        if not bs:
            return cls(np.empty(0), np.empty(0))
        b = np.asarray(bs)
        c = np.asarray(cs)
        order = np.argsort(b, kind="stable")
        b, c = b[order], c[order]
        uniq, inverse = np.unique(b, return_inverse=True)
        merged = np.zeros_like(uniq)
        np.add.at(merged, inverse, c)
        return cls(uniq, merged)

    @property
    def size(self) -> int:
        return int(self.breakpoints.size)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def value(self, x):
        """Evaluate h at x (scalar or array)."""
        x = np.asarray(x, dtype=float)
        if self.size == 0:
            return np.zeros(x.shape) if x.ndim else 0.0
        out = np.abs(x[..., None] - self.breakpoints) @ self.weights
        return out if x.ndim else float(out)


@dataclass(frozen=True)
class ProxResult:
    """Output of :func:`prox`.

    ``value`` is the minimizer, ``subgrad`` the subgradient G of h at the
    minimizer (so that ``value == v - lam * subgrad`` up to rounding), and
    ``interval`` a tag naming the cell that contained ``v``: ``"I0"``,
    ``"In,1"`` / ``"In,2"`` for n = 1..J, or ``"identity"`` for the
    degenerate cases lam == 0 and the empty sum.
    """

    value: float
    subgrad: float
    interval: str


def interval_edges(h: WeightedAbsSum, lam: float) -> np.ndarray:
    """Edges of the half-open cells the prox table is defined on.

    Returns the 2J nondecreasing edge positions: entry 2n is the left edge of
    the cell pinned at breakpoint n+1, entry 2n+1 its right edge.  The cell
    below the first edge and the cell at/above the last edge extend to
    infinity.
    """
    if lam < 0:
        raise InvalidStepsize(f"lam must be >= 0, got {lam}")
    b, c = h.breakpoints, h.weights
    if h.size == 0:
        return np.empty(0)
    csum = np.cumsum(c)
    total = csum[-1]
    # exact prefix of csum so consecutive edges share identical partial sums
    head_before = np.concatenate(([0.0], csum[:-1]))
    lo = b - lam * (total - 2.0 * head_before)
    hi = b - lam * (total - 2.0 * csum)
    edges = np.empty(2 * h.size)
    edges[0::2] = lo
    edges[1::2] = hi
    return edges


def prox(h: WeightedAbsSum, lam: float, v: float) -> ProxResult:
    """Exact minimizer of ``h(x) + (x - v)^2 / (2*lam)`` via the cell table.

    For ``lam == 0`` or the empty sum the prox is the identity; ``subgrad``
    is then the natural subgradient ``sum_j c_j * sign(v - b_j)`` with
    ``sign(0) = 0``, which keeps ``value == v - lam * subgrad`` valid.
    """
    if lam < 0:
        raise InvalidStepsize(f"lam must be >= 0, got {lam}")
    v = float(v)
    if not np.isfinite(v):
        raise InvalidInput(f"v must be finite, got {v}")
    b, c = h.breakpoints, h.weights
    if h.size == 0:
        return ProxResult(v, 0.0, "identity")
    if lam == 0.0:
        g = float(np.sum(c * np.sign(v - b)))
        return ProxResult(v, g, "identity")

    edges = interval_edges(h, lam)
    pos = int(np.searchsorted(edges, v, side="right"))
    csum = np.cumsum(c)
    total = csum[-1]
    if pos == 0:
        value = v + lam * total
        tag = "I0"
    elif pos % 2 == 1:
        n = (pos + 1) // 2
        value = float(b[n - 1])
        tag = f"I{n},1"
    else:
        n = pos // 2
        # shift by (weight above breakpoint n) - (weight up to n), times lam
        value = v + lam * (total - 2.0 * csum[n - 1])
        tag = f"I{n},2"
    return ProxResult(float(value), (v - float(value)) / lam, tag)


def prox_subgradient(h: WeightedAbsSum, lam: float, v: float) -> float:
    """Subgradient G with ``prox = v - lam * G``, as a sum of half-differences.

    Evaluates the compact closed form directly (no interval search); agrees
    with ``(v - prox(h, lam, v).value) / lam`` and is bounded by the total
    weight.
    """
    if lam <= 0:
        raise InvalidStepsize(f"lam must be > 0, got {lam}")
    v = float(v)
    if not np.isfinite(v):
        raise InvalidInput(f"v must be finite, got {v}")
    b, c = h.breakpoints, h.weights
    if h.size == 0:
        return 0.0
    csum = np.cumsum(c)
    head_before = csum - c
    tail_from = csum[-1] - head_before
    u = (v - b) / lam
    first = np.abs(u - head_before + tail_from)
    second = np.abs(u - csum + (tail_from - c))
    return 0.5 * float(np.sum(first - second))


def prox_shift(breakpoints, weights, lam, v):
    """Vectorized ``v - prox`` for stacked instances.

    ``breakpoints`` and ``weights`` have shape ``(J, ...)`` (one instance per
    trailing index), ``v`` broadcasts against the trailing shape, and ``lam``
    is a scalar or broadcastable array.  Breakpoints need not be sorted;
    zero weights and ties are handled.  Each term contributes a clipped
    affine piece, so the total shift is bounded by ``lam * sum(weights)``
    columnwise.
    """
    b = np.asarray(breakpoints, dtype=float)
    c = np.asarray(weights, dtype=float)
    if b.shape != c.shape:
        c = np.broadcast_to(c, b.shape)
    order = np.argsort(b, axis=0, kind="stable")
    b = np.take_along_axis(b, order, axis=0)
    c = np.take_along_axis(c, order, axis=0)
    csum = np.cumsum(c, axis=0)
    head_before = csum - c
    tail_after = csum[-1:] - csum
    arg = (v - b) + lam * (tail_after - head_before)
    cap = lam * c
    return np.clip(arg, -cap, cap).sum(axis=0)


def prox_objective(h: WeightedAbsSum, lam: float, v: float, x):
    """The convex objective ``h(x) + (x - v)^2 / (2*lam)`` being minimized."""
    if lam <= 0:
        raise InvalidStepsize(f"lam must be > 0, got {lam}")
    x = np.asarray(x, dtype=float)
    return h.value(x) + (x - v) ** 2 / (2.0 * lam)


_CHUNK = 1 << 18


def prox_oracle(h: WeightedAbsSum, lam: float, v: float, grid) -> float:
    """Numerical argmin of the prox objective, independent of the closed form.

    Scans the grid ``(lo, hi, step)`` for the best cell, then ternary-searches
    inside it down to a width of 1e-10 (sound because the objective is
    strictly convex, so the grid argmin lies within one cell of the true
    minimizer).  The grid must bracket the minimizer, which always lies in
    ``[min(min(b), v) - lam*sum(c), max(max(b), v) + lam*sum(c)]``.
    """
    if lam <= 0:
        raise InvalidStepsize(f"lam must be > 0, got {lam}")
    v = float(v)
    if not np.isfinite(v):
        raise InvalidInput(f"v must be finite, got {v}")
    lo, hi, step = (float(g) for g in grid)
    if not (np.isfinite(lo) and np.isfinite(hi) and np.isfinite(step)):
        raise InvalidInput("grid bounds and step must be finite")
    if not (lo < hi and 0 < step < (hi - lo)):
        raise InvalidInput(f"degenerate grid ({lo}, {hi}, {step})")

    n = int(round((hi - lo) / step)) + 1
    best_x, best_f = lo, np.inf
    for start in range(0, n, _CHUNK):
        xs = lo + step * np.arange(start, min(start + _CHUNK, n))
        fs = prox_objective(h, lam, v, xs)
        i = int(np.argmin(fs))
        if fs[i] < best_f:
            best_f = float(fs[i])
            best_x = float(xs[i])

    a = max(lo, best_x - step)
    b = min(hi, best_x + step)
    while b - a > 1e-10:
        m1 = a + (b - a) / 3.0
        m2 = b - (b - a) / 3.0
        if prox_objective(h, lam, v, m1) <= prox_objective(h, lam, v, m2):
            b = m2
        else:
            a = m1
    return 0.5 * (a + b)
