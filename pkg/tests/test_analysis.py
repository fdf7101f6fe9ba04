import numpy as np
import pytest

from proxdiff.analysis import (
    BiasBounds,
    bias_bound,
    block_max_norm,
    mean_dynamics_norm,
    network_msd,
    restricted_error,
    step_size_bounds,
    subset_msd,
    subset_schedules,
    to_db,
)
from proxdiff.engine import RunRecord
from proxdiff.errors import InvalidInput, NoData
from proxdiff.regularization import RegularizerSpec
from proxdiff.topology import ClusteredTopology, CombinationWeights, uniform_weights


def record(cluster_entry_sq, diverged=None, trailing=None, count=1, ratio=0.0):
    cluster_entry_sq = np.asarray(cluster_entry_sq, dtype=float)
    n_clusters = cluster_entry_sq.shape[1]
    trailing = (
        np.zeros((n_clusters, cluster_entry_sq.shape[2]))
        if trailing is None
        else trailing
    )
    return RunRecord("v", cluster_entry_sq, trailing, count, ratio, diverged)


def test_step_size_bounds_single_node_identity():
    topo = ClusteredTopology.from_clusters([[0]], [])
    w = uniform_weights(topo)
    assert step_size_bounds(topo, w.c, [np.eye(3)]).tolist() == [2.0]


def test_step_size_bounds_uniform_mix():
    # three-node clique, c = 1/3 each, variances (1, 2, 3): Rbar = 2 I
    topo = ClusteredTopology.from_clusters([[0, 1, 2]], [(0, 1), (1, 2), (0, 2)])
    w = uniform_weights(topo)
    bounds = step_size_bounds(topo, w.c, [1.0, 2.0, 3.0])
    assert np.allclose(bounds, 1.0)
    # agree with explicit eigen-solve on full matrices
    bounds_full = step_size_bounds(topo, w.c, [np.eye(2), 2 * np.eye(2), 3 * np.eye(2)])
    assert np.allclose(bounds_full, 1.0)


def test_step_size_bounds_concentrated_weight():
    topo = ClusteredTopology.from_clusters([[0, 1]], [(0, 1)])
    c = np.array([[0.0, 0.0], [1.0, 1.0]])  # all weight on node 1's data
    bounds = step_size_bounds(topo, c, [1.0, 4.0])
    assert np.allclose(bounds, 0.5)


def test_covariance_validation():
    topo = ClusteredTopology.from_clusters([[0]], [])
    w = uniform_weights(topo)
    with pytest.raises(InvalidInput):
        step_size_bounds(topo, w.c, [np.array([[1.0, 2.0], [0.0, 1.0]])])
    with pytest.raises(InvalidInput):
        step_size_bounds(topo, w.c, [np.array([[-1.0, 0.0], [0.0, 1.0]])])


def heterogeneous_instance():
    topo = ClusteredTopology.from_clusters([[0, 1], [2, 3]], [(0, 1), (2, 3), (1, 2)])
    return topo, uniform_weights(topo), [0.5, 1.0, 2.0, 3.5]


def test_bias_bound_eta_zero():
    topo, w, r = heterogeneous_instance()
    spec = RegularizerSpec(kind="l1", eta=0.0)
    bb = bias_bound(w, 0.1, 0.0, spec, 4, topo, r)
    assert bb.l1 == 0.0 and bb.reweighted == 0.0


def test_bias_bound_epsilon_one_matches_l1():
    topo, w, r = heterogeneous_instance()
    spec = RegularizerSpec(kind="reweighted_l1", eta=0.2, epsilon=1.0)
    bb = bias_bound(w, 0.1, 0.2, spec, 4, topo, r)
    assert bb.reweighted == pytest.approx(bb.l1)
    assert not bb.vacuous


def test_bias_bound_halving_mu():
    # the bound shrinks when mu halves, by a factor strictly inside (0.5, 1);
    # needs mu * sigma^2 in (1, 4/3) so the transition norm's mu-dependence
    # has flipped sign at full mu (otherwise the factor degenerates to 1)
    topo, w, _ = heterogeneous_instance()
    r = [1.0, 1.0, 1.0, 1.0]
    spec = RegularizerSpec(kind="l1", eta=0.2)
    full = bias_bound(w, 1.2, 0.2, spec, 4, topo, r)
    half = bias_bound(w, 0.6, 0.2, spec, 4, topo, r)
    assert half.b_norm > full.b_norm  # transition norm grows toward one
    factor = half.l1 / full.l1
    assert 0.5 < factor < 1.0
    assert half.l1 < full.l1  # monotone decrease of the bound


def test_bias_bound_vacuous_flagged():
    topo, w, r = heterogeneous_instance()
    spec = RegularizerSpec(kind="l1", eta=0.2)
    bb = bias_bound(w, 1e-9, 0.2, spec, 4, topo, r)
    assert bb.b_norm >= 1.0 - 1e-9
    bb_big = bias_bound(w, 5.0, 0.2, spec, 4, topo, r)  # beyond 2/lambda
    assert bb_big.vacuous and bb_big.l1 == np.inf


def test_mean_dynamics_norm_sampled_oracle_never_exceeds():
    topo, w, r = heterogeneous_instance()
    mu = np.array([0.3, 0.2, 0.15, 0.1])
    m = 3
    norm = mean_dynamics_norm(topo, w, mu, r)
    n = topo.n_nodes
    # build the explicit block transition matrix and sample unit block vectors
    blocks = np.zeros((n * m, n * m))
    rbar = [sum(w.c[l, k] * r[l] for l in range(n)) for k in range(n)]
    for k in range(n):
        for l in range(n):
            blocks[k * m:(k + 1) * m, l * m:(l + 1) * m] = (
                w.a[l, k] * (np.eye(m) - mu[l] * rbar[l] * np.eye(m))
            )
    rng = np.random.default_rng(3)
    for _ in range(200):
        x = rng.normal(size=(n, m))
        x /= np.linalg.norm(x, axis=1, keepdims=True)  # unit block norms
        y = (blocks @ x.reshape(-1)).reshape(n, m)
        assert block_max_norm(y) <= norm + 1e-12


def test_to_db_floor():
    assert to_db(0.0) == -320.0
    assert to_db(1.0) == 0.0


def two_cluster_topo():
    return ClusteredTopology.from_clusters([[0], [1]], [(0, 1)])


def test_network_msd_perfect_estimates_floor():
    topo = two_cluster_topo()
    curves = network_msd([record(np.zeros((5, 2, 3)))], topo, [0])
    assert np.all(curves.network_linear == 0.0)
    assert np.all(curves.network_db == -320.0)


def test_network_msd_constant_unit_error():
    topo = ClusteredTopology.from_clusters([[0]], [])
    sq = np.ones((4, 1, 1))
    curves = network_msd([record(sq)], topo, [0])
    assert np.allclose(curves.network_linear, 1.0)
    assert np.allclose(curves.network_db, 0.0)


def test_network_msd_node_average():
    # two singleton clusters with squared errors 1 and 3: network MSD 2
    topo = two_cluster_topo()
    sq = np.stack([np.full((4, 1), 1.0), np.full((4, 1), 3.0)], axis=1)
    curves = network_msd([record(sq)], topo, [0])
    assert np.allclose(curves.network_linear, 2.0)


def test_network_msd_excludes_diverged():
    topo = two_cluster_topo()
    good = record(np.full((4, 2, 1), 2.0))
    bad = record(np.full((4, 2, 1), 1e300), diverged=(2, 0))
    curves = network_msd([good, bad], topo, [0])
    assert curves.diverged == 1
    assert curves.n_effective == 1
    assert np.allclose(curves.network_linear, 2.0)
    with pytest.raises(NoData):
        network_msd([bad], topo, [0])


def fig_stage_schedule():
    m = 18
    base = np.zeros(m)
    d2a = np.zeros(m); d2a[0] = -1.0
    d3a = np.zeros(m); d3a[6] = -1.0
    stage1 = np.stack([base, base + d2a, base + d3a])
    d2b = np.zeros(m); d2b[:3] = -1.0; d2b[3] = 1.0
    d3b = np.zeros(m); d3b[12:15] = -1.0
    stage2 = np.stack([base, base + d2b, base + d3b])
    d2c = np.zeros(m); d2c[:3] = -1.0; d2c[3:6] = 1.0; d2c[6:9] = -1.0
    d3c = np.zeros(m); d3c[9:12] = 1.0; d3c[12:15] = -1.0; d3c[15:] = 1.0
    stage3 = np.stack([base, base + d2c, base + d3c])
    return np.stack([stage1, stage2, stage3])


def test_subset_schedule_matches_stagewise_sets():
    sched = fig_stage_schedule()
    subsets = subset_schedules(sched)
    # first stage: distinct components are entries 1 and 7 (1-based)
    assert subsets[0]["distinct"].tolist() == [0, 6]
    assert len(subsets[0]["identical"]) == 16
    assert len(subsets[1]["distinct"]) == 7
    # last stage: every entry differs somewhere, identical set empty
    assert len(subsets[2]["distinct"]) == 18
    assert len(subsets[2]["identical"]) == 0


def test_subset_msd_full_set_equals_cluster_curve():
    topo = two_cluster_topo()
    rng = np.random.default_rng(0)
    sq = rng.uniform(0.1, 1.0, size=(6, 2, 3))
    sched = np.zeros((1, 2, 3))
    sched[0, 1] = 1.0  # clusters differ everywhere: "distinct" = all entries
    curves = subset_msd([record(sq)], sched, topo, [0])
    assert np.allclose(
        curves.cluster_linear[(0, "distinct")], curves.cluster_linear[(0, "all")]
    )
    assert np.all(np.isnan(curves.cluster_linear[(0, "identical")]))
    assert np.isnan(curves.steady_state["cluster0:identical"][0])


def test_restricted_error_subset():
    topo = two_cluster_topo()
    sq = np.zeros((10, 2, 4))
    sq[:, 1, 2] = 5.0
    err = restricted_error([record(sq)], topo, cluster=1, entries=[2, 3], window=4)
    assert err == pytest.approx(5.0)
    assert restricted_error([record(sq)], topo, 0, [0, 1], 4) == 0.0


def test_empirical_bias_within_theorem_bound():
    # small coupled instance with a nonvacuous transition norm: the measured
    # steady-state mean-error block-max norm must respect the bias bound
    from proxdiff.harness import load_scenario, run_experiment

    doc = {
        "name": "bias_check", "kind": "lms",
        "topology": {"clusters": [[0, 1], [2, 3]], "edges": [[0, 1], [2, 3], [1, 2]]},
        "weights": "uniform",
        "model": {
            "m": 2, "sigma2_x": 1.0, "sigma2_z": 1e-4,
            "optimum": {"base": [0.3, -0.2],
                        "stages": [{"start": 0, "deltas": [[0.0, 0.0], [0.28, 0.0]]}]},
        },
        "variants": [{"name": "prox", "family": "proximal_diffusion", "mu": 0.6,
                      "regularizer": {"kind": "l1", "eta": 0.2}}],
        "iterations": 600, "runs": 60, "seed": 13, "window": 200,
    }
    res = run_experiment(load_scenario(doc), write=False, jobs=1)
    entry = res.summary["variants"]["prox"]
    assert not entry["stability"]["vacuous"]
    assert entry["mean_error_block_max"] <= entry["stability"]["bias_l1"]
