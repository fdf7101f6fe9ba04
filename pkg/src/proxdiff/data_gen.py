"""Synthetic streaming data for both experiment families.

Determinism contract: every (seed, run, node) triple owns an independent
random stream, and each iteration consumes a fixed number of variates from
it.  Batch generation and per-sample generation therefore produce identical
values, and runs can be replayed bit-identically in any process.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGeometry, InvalidInput
from .topology import ClusteredTopology


def node_stream(seed: int, run: int, node: int) -> np.random.Generator:
    """The dedicated random stream of one node in one Monte-Carlo run."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(run), int(node)]))


# ---------------------------------------------------------------------------
# generic multitask LMS model


@dataclass
class LmsSignalModel:
    """Linear regression streams d = x'w + z with a piecewise-constant optimum.

    ``schedule`` lists ``(start_iteration, (Q, M) per-cluster optima)``;
    starts must be strictly increasing beginning at zero.  Regressors are
    isotropic Gaussian with per-node variance ``sigma2_x``; noise variance is
    ``sigma2_z`` per node.
    """

    m: int
    sigma2_x: np.ndarray
    sigma2_z: np.ndarray
    schedule: tuple

    def __post_init__(self):
        self.sigma2_x = np.asarray(self.sigma2_x, dtype=float)
        self.sigma2_z = np.asarray(self.sigma2_z, dtype=float)
        if np.any(self.sigma2_x <= 0) or np.any(self.sigma2_z <= 0):
            raise InvalidInput("signal and noise variances must be positive")
        starts = [s for s, _ in self.schedule]
        if not starts or starts[0] != 0:
            raise InvalidInput("optimum schedule must start at iteration 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise InvalidInput("schedule start iterations must strictly increase")
        self.schedule = tuple(
            (int(s), np.asarray(w, dtype=float)) for s, w in self.schedule
        )
        for _, w in self.schedule:
            if w.ndim != 2 or w.shape[1] != self.m:
                raise InvalidInput("each schedule entry must be a (Q, M) array")

    @property
    def stage_starts(self) -> np.ndarray:
        return np.array([s for s, _ in self.schedule], dtype=int)

    def stage_of(self, i: int) -> int:
        return int(np.searchsorted(self.stage_starts, i, side="right") - 1)

    def true_w(self, i: int) -> np.ndarray:
        """Per-cluster optima (Q, M) active at iteration i."""
        return self.schedule[self.stage_of(i)][1]


def sample_lms(model: LmsSignalModel, topo: ClusteredTopology, k: int, i: int,
               rng: np.random.Generator):
    """One (regressor, measurement) pair for node k at iteration i.

    Consumes exactly m + 1 standard normals from ``rng``; the caller owns the
    stream position (see :func:`node_stream`).
    """
    if i < 0:
        raise InvalidInput("iteration must be nonnegative")
    buf = rng.standard_normal(model.m + 1)
    x = buf[: model.m] * np.sqrt(model.sigma2_x[k])
    z = buf[model.m] * np.sqrt(model.sigma2_z[k])
    w_true = model.true_w(i)[topo.cluster_of[k]]
    # multiply-then-sum so batched generation reproduces the same bits
    return x, float((x * w_true).sum() + z)


@dataclass
class LmsRunData:
    """Precomputed data streams for one Monte-Carlo run (all variants share it)."""

    x: np.ndarray        # (T, N, M)
    d: np.ndarray        # (T, N)
    true_w: np.ndarray   # (S, Q, M)
    stage_starts: np.ndarray
    stage_of_iter: np.ndarray
    kind: str = field(default="lms", init=False)

    @property
    def n_iterations(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[2]

    def batch(self, i: int):
        return self.x[i], self.d[i]

    def true_w_nodes(self, i: int, cluster_of) -> np.ndarray:
        return self.true_w[self.stage_of_iter[i]][list(cluster_of)]


def generate_lms_run(model: LmsSignalModel, topo: ClusteredTopology,
                     n_iterations: int, seed: int, run: int) -> LmsRunData:
    n, m = topo.n_nodes, model.m
    x = np.empty((n_iterations, n, m))
    z = np.empty((n_iterations, n))
    for k in range(n):
        buf = node_stream(seed, run, k).standard_normal((n_iterations, m + 1))
        x[:, k, :] = buf[:, :m] * np.sqrt(model.sigma2_x[k])
        z[:, k] = buf[:, m] * np.sqrt(model.sigma2_z[k])

    starts = model.stage_starts
    stage_of_iter = np.searchsorted(starts, np.arange(n_iterations), side="right") - 1
    d = np.empty((n_iterations, n))
    cluster_of = list(topo.cluster_of)
    for s, (start, w_stage) in enumerate(model.schedule):
        rows = np.nonzero(stage_of_iter == s)[0]
        if rows.size == 0:
            continue
        w_nodes = w_stage[cluster_of]  # (N, M)
        d[rows] = (x[rows] * w_nodes[None, :, :]).sum(axis=2) + z[rows]
    return LmsRunData(
        x, d, np.stack([w for _, w in model.schedule]), starts, stage_of_iter
    )


# ---------------------------------------------------------------------------
# cognitive-radio spectrum model


@dataclass
class SpectrumModel:
    """Basis-expansion power-spectrum model with censored path-loss estimates.

    Each node senses ``n_freq`` samples of the aggregate spectrum of
    ``n_primary`` sources plus its own cluster's interference source, through
    per-iteration jittered inverse-square path losses.  The learner sees a
    regression matrix built from *censored* mean losses: a source whose
    jittered loss falls at or below ``loss_threshold`` contributes an
    all-zero column block.
    """

    n_primary: int
    n_basis: int
    n_freq: int
    basis_sigma2: float
    pu_positions: np.ndarray      # (n_primary, 2)
    is_positions: np.ndarray      # (Q, 2)
    node_positions: np.ndarray    # (N, 2)
    loss_threshold: float
    jitter_rel: float
    noise_std: float
    upsilon: np.ndarray           # (Q, n_basis * (n_primary + 1))
    basis: np.ndarray = field(init=False)
    freqs: np.ndarray = field(init=False)
    centers: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.n_freq < self.n_basis:
            raise InvalidInput("need at least as many frequency samples as bases")
        if self.loss_threshold < 0:
            raise InvalidInput("loss threshold must be nonnegative")
        self.pu_positions = np.asarray(self.pu_positions, dtype=float)
        self.is_positions = np.asarray(self.is_positions, dtype=float)
        self.node_positions = np.asarray(self.node_positions, dtype=float)
        self.upsilon = np.asarray(self.upsilon, dtype=float)
        if self.upsilon.shape[1] != self.dim:
            raise InvalidInput(
                f"upsilon rows must have {self.dim} entries, got {self.upsilon.shape[1]}"
            )
        self.centers = (np.arange(self.n_basis) + 0.5) / self.n_basis
        self.freqs = np.linspace(0.0, 1.0, self.n_freq)
        self.basis = np.exp(
            -((self.freqs[:, None] - self.centers[None, :]) ** 2)
            / (2.0 * self.basis_sigma2)
        )

    @property
    def dim(self) -> int:
        return self.n_basis * (self.n_primary + 1)

    def mean_losses(self, topo: ClusteredTopology) -> np.ndarray:
        """Mean path losses (N, n_primary + 1): PUs then own-cluster IS."""
        n = topo.n_nodes
        out = np.empty((n, self.n_primary + 1))
        for k in range(n):
            pos = self.node_positions[k]
            sources = np.vstack(
                [self.pu_positions, self.is_positions[topo.cluster_of[k]][None, :]]
            )
            d2 = ((sources - pos) ** 2).sum(axis=1)
            if np.any(d2 == 0):
                raise InvalidGeometry(f"node {k} coincides with a transmitter")
            out[k] = 1.0 / d2
        return out

    def source_spectra(self, topo: ClusteredTopology) -> np.ndarray:
        """Per node: (n_freq, n_primary + 1) clean source spectra at the samples."""
        blocks = self.upsilon.reshape(len(self.upsilon), self.n_primary + 1, self.n_basis)
        pu = np.stack([self.basis @ blocks[0, p] for p in range(self.n_primary)], axis=1)
        out = np.empty((topo.n_nodes, self.n_freq, self.n_primary + 1))
        for k in range(topo.n_nodes):
            q = topo.cluster_of[k]
            out[k, :, : self.n_primary] = pu
            out[k, :, self.n_primary] = self.basis @ blocks[q, self.n_primary]
        return out


def sample_spectrum(model: SpectrumModel, topo: ClusteredTopology, k: int, i: int,
                    rng: np.random.Generator):
    """(true regression matrix, measurement, censored regression matrix).

    Consumes n_primary + 1 + n_freq standard normals.  The measurement uses
    the true jittered losses; the censored matrix is what the learner sees.
    """
    if i < 0:
        raise InvalidInput("iteration must be nonnegative")
    lbar = model.mean_losses(topo)[k]
    buf = rng.standard_normal(model.n_primary + 1 + model.n_freq)
    losses = lbar + buf[: model.n_primary + 1] * model.jitter_rel * lbar
    noise = buf[model.n_primary + 1 :] * model.noise_std

    spectra = model.source_spectra(topo)[k]  # (n_freq, n_primary + 1)
    r = spectra @ losses + noise
    phi_true = np.kron(losses[None, :], model.basis).reshape(model.n_freq, model.dim)
    censored = np.where(losses > model.loss_threshold, lbar, 0.0)
    phi_hat = np.kron(censored[None, :], model.basis).reshape(model.n_freq, model.dim)
    return phi_true, r, phi_hat


@dataclass
class SpectrumRunData:
    """Per-run jitter and noise draws; regression matrices built lazily."""

    model: SpectrumModel
    lbar: np.ndarray        # (N, S) mean losses, S = n_primary + 1
    spectra: np.ndarray     # (N, F, S) clean source spectra per node
    jitter: np.ndarray      # (T, N, S)
    noise: np.ndarray       # (T, N, F)
    true_w: np.ndarray      # (1, Q, dim)
    stage_starts: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=int))
    kind: str = field(default="spectrum", init=False)

    @property
    def n_iterations(self) -> int:
        return self.jitter.shape[0]

    @property
    def dim(self) -> int:
        return self.model.dim

    def batch(self, i: int):
        losses = self.lbar + self.jitter[i]                     # (N, S)
        r = np.einsum("nfs,ns->nf", self.spectra, losses) + self.noise[i]
        censored = np.where(losses > self.model.loss_threshold, self.lbar, 0.0)
        phi_hat = (
            censored[:, None, :, None] * self.model.basis[None, :, None, :]
        ).reshape(losses.shape[0], self.model.n_freq, self.dim)
        return phi_hat, r

    def true_w_nodes(self, i: int, cluster_of) -> np.ndarray:
        return self.true_w[0][list(cluster_of)]


def generate_spectrum_run(model: SpectrumModel, topo: ClusteredTopology,
                          n_iterations: int, seed: int, run: int) -> SpectrumRunData:
    n = topo.n_nodes
    s = model.n_primary + 1
    lbar = model.mean_losses(topo)
    jitter = np.empty((n_iterations, n, s))
    noise = np.empty((n_iterations, n, model.n_freq))
    for k in range(n):
        buf = node_stream(seed, run, k).standard_normal((n_iterations, s + model.n_freq))
        jitter[:, k, :] = buf[:, :s] * model.jitter_rel * lbar[k]
        noise[:, k, :] = buf[:, s:] * model.noise_std
    return SpectrumRunData(
        model, lbar, model.source_spectra(topo), jitter, noise,
        model.upsilon[None, :, :],
    )
