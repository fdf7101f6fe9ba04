"""Scenario configuration, Monte-Carlo orchestration, and result emission.

A scenario is one JSON document naming the topology, signal model, algorithm
variants, and run counts.  Presets shipped with the package reproduce the
reference experiments at their published settings; every knob can be
overridden from the command line.

Determinism: the experiment seed fixes the model realization (optimum
vectors, per-node variances) and every (run, node) data stream.  All
variants inside a run consume the same data stream (paired comparisons),
runs are reduced in index order regardless of worker scheduling, and floats
are formatted reproducibly, so identical scenario + seed yields byte
identical outputs at any parallelism level.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    MsdCurves,
    network_msd,
    stability_report,
    subset_msd,
    to_db,
)
from .data_gen import (
    LmsSignalModel,
    SpectrumModel,
    generate_lms_run,
    generate_spectrum_run,
)
from .engine import AlgorithmVariant, simulate_all
from .errors import InvalidScenario, NoData, ProxdiffError
from .prox import WeightedAbsSum, prox, prox_objective, prox_oracle
from .regularization import RegularizerSpec
from .topology import ClusteredTopology, CombinationWeights, uniform_weights, validate

_MODEL_STREAM_TAG = 1


@dataclass
class Scenario:
    """Fully resolved experiment description."""

    name: str
    kind: str
    topology: ClusteredTopology
    weights: CombinationWeights
    variants: tuple
    iterations: int
    runs: int
    seed: int
    window: int = 50
    model_cfg: dict = field(default_factory=dict)
    sweep: dict | None = None
    raw: dict = field(default_factory=dict)


def _parse_regularizer(cfg: dict | None) -> RegularizerSpec:
    if not cfg:
        return RegularizerSpec()
    known = {
        "kind", "eta", "epsilon", "adaptive_p", "adaptive_p_scale",
        "reweight_source",
    }
    extra = set(cfg) - known
    if extra:
        raise InvalidScenario(f"unknown regularizer fields {sorted(extra)}")
    return RegularizerSpec(**cfg)


def _parse_variant(cfg: dict) -> AlgorithmVariant:
    try:
        mu = cfg["mu"]
        mu = np.asarray(mu, dtype=float) if isinstance(mu, list) else float(mu)
        return AlgorithmVariant(
            name=cfg["name"],
            family=cfg["family"],
            mu=mu,
            regularizer=_parse_regularizer(cfg.get("regularizer")),
        )
    except KeyError as missing:
        raise InvalidScenario(f"variant is missing field {missing}") from None


def _expand_sweep(doc: dict) -> list[dict]:
    """Turn a sweep directive into an explicit variant grid."""
    sweep = doc["sweep"]
    mu = sweep.get("mu", 0.02)
    epsilon = sweep.get("epsilon", 0.1)
    variants = [{"name": "eta0", "family": "diffusion", "mu": mu}]
    for kind in sweep.get("kinds", ["l1", "reweighted_l1"]):
        for eta in sweep["eta"]:
            if eta == 0:
                continue
            variants.append(
                {
                    "name": f"{kind}:eta={eta:g}",
                    "family": "proximal_diffusion",
                    "mu": mu,
                    "regularizer": {"kind": kind, "eta": eta, "epsilon": epsilon},
                }
            )
    return variants


def list_presets() -> dict:
    """Shipped scenario names mapped to their one-line descriptions."""
    out = {}
    for entry in sorted(resources.files("proxdiff.scenarios").iterdir()):
        if entry.name.endswith(".json"):
            doc = json.loads(entry.read_text(encoding="utf-8"))
            out[entry.name[: -len(".json")]] = doc.get("description", "")
    return out


def _read_scenario_doc(source) -> dict:
    if isinstance(source, dict):
        return source
    path = Path(source)
    if path.exists():
        doc = json.loads(path.read_text(encoding="utf-8"))
    else:
        candidate = resources.files("proxdiff.scenarios") / f"{source}.json"
        try:
            doc = json.loads(candidate.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise InvalidScenario(
                f"{source!r} is neither a file nor a preset "
                f"(presets: {', '.join(sorted(list_presets()))})"
            ) from None
    if "scenario" in doc:  # run manifest: replay its embedded scenario
        inner = doc["scenario"]
        inner.setdefault("seed", doc.get("seed"))
        return inner
    return doc


def load_scenario(source, runs=None, iterations=None, seed=None) -> Scenario:
    """Parse and validate a scenario document, file path, or preset name."""
    doc = dict(_read_scenario_doc(source))
    try:
        topo_cfg = doc["topology"]
        topo = ClusteredTopology.from_clusters(
            topo_cfg["clusters"], [tuple(e) for e in topo_cfg["edges"]]
        )
    except KeyError as missing:
        raise InvalidScenario(f"missing topology field {missing}") from None
    except ProxdiffError as err:
        raise InvalidScenario(f"invalid topology: {err}") from None

    weights_cfg = doc.get("weights", "uniform")
    if weights_cfg == "uniform":
        weights = uniform_weights(topo)
    else:
        weights = CombinationWeights.from_rho(
            np.asarray(weights_cfg["c"], dtype=float),
            np.asarray(weights_cfg["a"], dtype=float),
            np.asarray(weights_cfg["rho"], dtype=float),
        )
    violations = validate(topo, weights)
    if violations:
        raise InvalidScenario(
            "invalid topology/weights: " + "; ".join(str(v) for v in violations)
        )

    if doc.get("sweep"):
        doc["variants"] = _expand_sweep(doc)
    variants = tuple(_parse_variant(v) for v in doc.get("variants", []))
    if not variants:
        raise InvalidScenario("variant list must not be empty")
    names = [v.name for v in variants]
    if len(set(names)) != len(names):
        raise InvalidScenario("variant names must be unique")

    resolved_iterations = int(
        iterations if iterations is not None else doc.get("iterations", 1000)
    )
    resolved_runs = int(runs if runs is not None else doc.get("runs", 50))
    resolved_seed = int(seed if seed is not None else doc.get("seed", 0))
    # echo overrides back so a written manifest replays the run as executed
    doc.update(iterations=resolved_iterations, runs=resolved_runs, seed=resolved_seed)
    scen = Scenario(
        name=doc.get("name", "scenario"),
        kind=doc.get("kind", "lms"),
        topology=topo,
        weights=weights,
        variants=variants,
        iterations=resolved_iterations,
        runs=resolved_runs,
        seed=resolved_seed,
        window=int(doc.get("window", 50)),
        model_cfg=doc.get("model", {}),
        sweep=doc.get("sweep"),
        raw=doc,
    )
    if scen.kind not in ("lms", "spectrum"):
        raise InvalidScenario(f"unknown scenario kind {scen.kind!r}")
    if scen.iterations <= 0 or scen.runs <= 0:
        raise InvalidScenario("iterations and runs must be positive")
    if scen.seed < 0:
        raise InvalidScenario("seed must be nonnegative")
    return scen


# ---------------------------------------------------------------------------
# model realization


def _draw_per_node(cfg, n, rng, what):
    if isinstance(cfg, dict):
        lo, hi = cfg["uniform"]
        return rng.uniform(lo, hi, n)
    arr = np.broadcast_to(np.asarray(cfg, dtype=float), (n,)).copy()
    if np.any(arr <= 0):
        raise InvalidScenario(f"{what} must be positive")
    return arr


def realize_model(scenario: Scenario):
    """Build the signal model, drawing any configured randomness from the seed.

    Returns (model, realized) where ``realized`` records every drawn value
    for the run manifest.
    """
    cfg = scenario.model_cfg
    topo = scenario.topology
    rng = np.random.default_rng(
        np.random.SeedSequence([scenario.seed, _MODEL_STREAM_TAG])
    )
    if scenario.kind == "spectrum":
        model = SpectrumModel(
            n_primary=int(cfg["n_primary"]),
            n_basis=int(cfg["n_basis"]),
            n_freq=int(cfg["n_freq"]),
            basis_sigma2=float(cfg["basis_sigma2"]),
            pu_positions=cfg["pu_positions"],
            is_positions=cfg["is_positions"],
            node_positions=cfg["node_positions"],
            loss_threshold=float(cfg["loss_threshold"]),
            jitter_rel=float(cfg.get("jitter_rel", 0.1)),
            noise_std=float(cfg.get("noise_std", 0.01)),
            upsilon=cfg["upsilon"],
        )
        realized = {
            "mean_losses": model.mean_losses(topo).tolist(),
            "upsilon": model.upsilon.tolist(),
            "node_positions": model.node_positions.tolist(),
        }
        return model, realized

    n = topo.n_nodes
    m = int(cfg["m"])
    sigma2_x = _draw_per_node(cfg["sigma2_x"], n, rng, "sigma2_x")
    sigma2_z = _draw_per_node(cfg["sigma2_z"], n, rng, "sigma2_z")
    opt = cfg["optimum"]
    if opt.get("base") == "standard_normal":
        base = rng.standard_normal(m)
    else:
        base = np.asarray(opt["base"], dtype=float)
    q = topo.n_clusters
    schedule = []
    for stage in opt["stages"]:
        deltas = np.asarray(stage["deltas"], dtype=float)
        if deltas.shape != (q, m):
            raise InvalidScenario(
                f"stage at {stage['start']}: deltas must be ({q}, {m})"
            )
        schedule.append((int(stage["start"]), base[None, :] + deltas))
    model = LmsSignalModel(m, sigma2_x, sigma2_z, tuple(schedule))
    realized = {
        "sigma2_x": sigma2_x.tolist(),
        "sigma2_z": sigma2_z.tolist(),
        "w_base": base.tolist(),
        "w_true_per_stage": [w.tolist() for _, w in model.schedule],
    }
    return model, realized


def model_covariances(scenario: Scenario, model) -> list:
    """Per-node regressor covariances for the stability checker."""
    if scenario.kind == "lms":
        return list(model.sigma2_x)
    lbar = model.mean_losses(scenario.topology)
    censored = np.where(lbar > model.loss_threshold, lbar, 0.0)
    out = []
    for k in range(scenario.topology.n_nodes):
        phi_hat = np.kron(censored[k][None, :], model.basis).reshape(
            model.n_freq, model.dim
        )
        out.append(phi_hat.T @ phi_hat)
    return out


# ---------------------------------------------------------------------------
# experiment execution


def _simulate_run(scenario: Scenario, model, run: int) -> dict:
    if scenario.kind == "lms":
        data = generate_lms_run(
            model, scenario.topology, scenario.iterations, scenario.seed, run
        )
    else:
        data = generate_spectrum_run(
            model, scenario.topology, scenario.iterations, scenario.seed, run
        )
    return simulate_all(
        scenario.variants, scenario.weights, scenario.topology, data, scenario.window
    )


def _worker(args):
    scenario, model, run = args
    return run, _simulate_run(scenario, model, run)


@dataclass
class ExperimentResult:
    scenario: Scenario
    curves: dict           # variant name -> MsdCurves (None if fully diverged)
    manifest: dict
    summary: dict
    paths: dict = field(default_factory=dict)

    @property
    def any_fully_diverged(self) -> bool:
        return any(c is None for c in self.curves.values())


def run_experiment(scenario: Scenario, out_dir=None, jobs: int | None = None,
                   write: bool = True) -> ExperimentResult:
    """Execute all Monte-Carlo runs and aggregate, optionally writing outputs.

    Every variant sees identical per-run data streams.  Runs execute in
    parallel across ``jobs`` processes (default: all cores); aggregation is
    a fixed-order reduction so results do not depend on ``jobs``.
    """
    model, realized = realize_model(scenario)
    jobs = jobs or os.cpu_count() or 1
    jobs = max(1, min(jobs, scenario.runs))

    per_variant = {v.name: [] for v in scenario.variants}
    if jobs == 1:
        results = (_worker((scenario, model, r)) for r in range(scenario.runs))
        for _, records in results:
            for name, rec in records.items():
                per_variant[name].append(rec)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_worker, (scenario, model, r))
                for r in range(scenario.runs)
            ]
            by_run = {}
            for fut in futures:
                run, records = fut.result()
                by_run[run] = records
            for r in range(scenario.runs):
                for name, rec in by_run[r].items():
                    per_variant[name].append(rec)

    if scenario.kind == "lms":
        schedule_w = np.stack([w for _, w in model.schedule])
        stage_starts = model.stage_starts
    else:
        schedule_w = model.upsilon[None, :, :]
        stage_starts = np.zeros(1, dtype=int)

    curves = {}
    run_status = {}
    block_errors = {}
    for v in scenario.variants:
        records = per_variant[v.name]
        run_status[v.name] = [
            "ok" if r.ok else f"diverged@{r.diverged[0]}:{r.diverged[1]}"
            for r in records
        ]
        try:
            c = network_msd(records, scenario.topology, stage_starts, scenario.window)
            curves[v.name] = subset_msd(
                records, schedule_w, scenario.topology, stage_starts,
                scenario.window, c,
            )
            if scenario.kind == "spectrum":
                block_errors[v.name] = _spectrum_block_errors(
                    scenario, model, records
                )
        except NoData:
            curves[v.name] = None

    covs = model_covariances(scenario, model)
    summary = _build_summary(scenario, curves, covs, block_errors)
    manifest = {
        "name": scenario.name,
        "seed": scenario.seed,
        "version": __version__,
        "scenario": scenario.raw,
        "realized": realized,
        "runs": [
            {"run": r, "variants": {v: run_status[v][r] for v in run_status}}
            for r in range(scenario.runs)
        ],
    }

    result = ExperimentResult(scenario, curves, manifest, summary)
    if write:
        result.paths = write_outputs(result, out_dir)
    return result


def _spectrum_block_errors(scenario: Scenario, model, records) -> dict:
    """Trailing per-cluster reconstruction error over each source's block."""
    from .analysis import restricted_error

    nb = model.n_basis
    blocks = {f"pu{p + 1}": range(p * nb, (p + 1) * nb)
              for p in range(model.n_primary)}
    blocks["is"] = range(model.n_primary * nb, (model.n_primary + 1) * nb)
    out = {}
    for q in range(scenario.topology.n_clusters):
        out[f"cluster{q}"] = {
            name: restricted_error(
                records, scenario.topology, q, entries, scenario.window
            )
            for name, entries in blocks.items()
        }
    return out


def _build_summary(scenario: Scenario, curves: dict, covs, block_errors=None) -> dict:
    from .analysis import block_max_norm

    out = {
        "name": scenario.name,
        "kind": scenario.kind,
        "seed": scenario.seed,
        "runs": scenario.runs,
        "iterations": scenario.iterations,
        "variants": {},
    }
    for v in scenario.variants:
        c = curves[v.name]
        report = stability_report(
            scenario.topology, scenario.weights, v.mu, covs,
            v.regularizer.eta, v.regularizer,
            m=_scenario_dim(scenario),
        )
        entry = {
            "family": v.family,
            "eta": v.regularizer.eta,
            "kind": v.regularizer.kind,
            "stability": {
                "bounds": report.bounds.tolist(),
                "mu": report.mu.tolist(),
                "ok": report.ok.tolist(),
                "b_norm": report.b_norm,
                "bias_l1": _json_float(report.bias.l1),
                "bias_reweighted": _json_float(report.bias.reweighted),
                "vacuous": report.bias.vacuous,
            },
        }
        if c is None:
            entry.update({"fully_diverged": True, "diverged_runs": scenario.runs})
        else:
            entry.update(
                {
                    "fully_diverged": False,
                    "diverged_runs": c.diverged,
                    "n_effective": c.n_effective,
                    "max_shift_ratio": c.max_shift_ratio,
                    "steady_state_db": {
                        name: {str(s): _json_float(to_db(val)) for s, val in stages.items()}
                        for name, stages in c.steady_state.items()
                    },
                    "mean_error_block_max": (
                        None if c.mean_error is None
                        else block_max_norm(c.mean_error)
                    ),
                }
            )
            if block_errors and v.name in block_errors:
                entry["block_errors"] = block_errors[v.name]
        out["variants"][v.name] = entry

    if scenario.sweep:
        out["sweep"] = _sweep_table(scenario, curves)
    return out


def _sweep_table(scenario: Scenario, curves: dict) -> dict:
    """Differential steady-state MSD against the eta = 0 baseline, per stage."""
    base = curves.get("eta0")
    if base is None:
        return {"error": "baseline diverged"}
    base_db = {s: to_db(v) for s, v in base.steady_state["network"].items()}
    table = {}
    for name, c in curves.items():
        if name == "eta0" or c is None or ":eta=" not in name:
            continue
        kind, eta = name.split(":eta=")
        table.setdefault(kind, {})[eta] = {
            str(s): _json_float(to_db(v) - base_db[s])
            for s, v in c.steady_state["network"].items()
        }
    return table


def _scenario_dim(scenario: Scenario) -> int:
    if scenario.kind == "lms":
        return int(scenario.model_cfg["m"])
    return int(scenario.model_cfg["n_basis"]) * (int(scenario.model_cfg["n_primary"]) + 1)


def _json_float(x):
    x = float(x)
    if np.isnan(x):
        return None
    if np.isinf(x):
        return 1e308 if x > 0 else -1e308
    return x


# ---------------------------------------------------------------------------
# output writers


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def write_outputs(result: ExperimentResult, out_dir=None) -> dict:
    out_dir = Path(out_dir or os.environ.get("PROXDIFF_OUT", "results"))
    out_dir.mkdir(parents=True, exist_ok=True)
    name = result.scenario.name
    paths = {
        "curves": out_dir / f"{name}_curves.csv",
        "summary": out_dir / f"{name}_summary.json",
        "manifest": out_dir / f"{name}_manifest.json",
    }
    lines = ["variant,metric,cluster,iteration,value_db,value_linear,n_runs_effective"]
    for vname, curves in result.curves.items():
        if curves is None:
            continue
        n_eff = curves.n_effective
        for i, lin in enumerate(curves.network_linear):
            lines.append(
                f"{vname},network_msd,,{i},{_fmt(to_db(lin))},{_fmt(lin)},{n_eff}"
            )
        for (q, subset), arr in sorted(curves.cluster_linear.items()):
            metric = f"msd_{subset}"
            for i, lin in enumerate(arr):
                if np.isnan(lin):
                    continue  # empty entry subset: absent, not zero
                lines.append(
                    f"{vname},{metric},{q},{i},{_fmt(to_db(lin))},{_fmt(lin)},{n_eff}"
                )
    paths["curves"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["summary"].write_text(
        json.dumps(result.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    paths["manifest"].write_text(
        json.dumps(result.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return paths


# ---------------------------------------------------------------------------
# randomized prox verification (CLI surface)


@dataclass
class ProxCheck:
    cases: int
    max_deviation: float
    max_objective_excess: float
    elapsed_s: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= 1e-4 and self.max_objective_excess <= 1e-8


def check_prox(n_cases: int, seed: int = 0) -> ProxCheck:
    """Randomized closed-form-vs-oracle equivalence sweep."""
    if n_cases < 1:
        raise InvalidScenario("check-prox needs at least one case")
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    max_dev = max_excess = 0.0
    for _ in range(n_cases):
        j = int(rng.integers(1, 7))
        b = rng.uniform(-5, 5, j)
        while np.unique(b).size < j:
            b = rng.uniform(-5, 5, j)
        c = rng.uniform(0.01, 1, j)
        lam = float(rng.uniform(0.01, 2))
        v = float(rng.uniform(-10, 10))
        h = WeightedAbsSum.from_terms(zip(b, c))
        got = prox(h, lam, v).value
        pad = lam * h.total_weight + 1.0
        lo, hi = min(b.min(), v) - pad, max(b.max(), v) + pad
        ref = prox_oracle(h, lam, v, (lo, hi, (hi - lo) / 4000))
        max_dev = max(max_dev, abs(got - ref))
        excess = prox_objective(h, lam, v, got) - prox_objective(h, lam, v, ref)
        max_excess = max(max_excess, float(excess))
    return ProxCheck(n_cases, max_dev, max_excess, time.perf_counter() - t0)
