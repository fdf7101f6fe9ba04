"""Command-line front end.

Subcommands:

* ``run <scenario> [--runs N] [--seed S] [--out DIR] [--jobs J] [--iterations T]``
  execute a scenario (path, preset name, or previously written manifest) and
  write the curves CSV, summary JSON, and replay manifest.
* ``check-prox [--cases N] [--seed S]`` randomized closed-form-vs-oracle
  verification of the proximal kernel.
* ``list-presets`` shipped scenario names.
* ``stability <scenario>`` print the step-size bounds, configured steps, the
  mean-dynamics norm, and bias bounds per variant.

The default output directory is ``$PROXDIFF_OUT`` or ``./results``.
"""

from __future__ import annotations

import argparse
import sys


from .analysis import stability_report, to_db
from .errors import ProxdiffError
from .harness import (
    check_prox,
    list_presets,
    load_scenario,
    model_covariances,
    realize_model,
    run_experiment,
    _scenario_dim,
)


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proxdiff",
        description="Multitask diffusion LMS with sparsity-promoting proximal coregularization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario and write results")
    run.add_argument("scenario", help="scenario file, preset name, or manifest")
    run.add_argument("--runs", type=_positive_int, default=None)
    run.add_argument("--iterations", type=_positive_int, default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--jobs", type=_positive_int, default=None,
                     help="parallel Monte-Carlo workers (default: all cores)")

    check = sub.add_parser("check-prox", help="randomized prox oracle verification")
    check.add_argument("--cases", type=_positive_int, default=10000)
    check.add_argument("--seed", type=int, default=0)

    sub.add_parser("list-presets", help="list shipped scenarios")

    stab = sub.add_parser("stability", help="print the stability report")
    stab.add_argument("scenario", help="scenario file or preset name")
    return parser


def _cmd_run(args) -> int:
    scenario = load_scenario(
        args.scenario, runs=args.runs, iterations=args.iterations, seed=args.seed
    )
    result = run_experiment(scenario, out_dir=args.out, jobs=args.jobs)
    for name, curves in result.curves.items():
        if curves is None:
            print(f"{name}: every run diverged")
            continue
        steady = "  ".join(
            f"stage{s}={to_db(v):.2f}dB"
            for s, v in sorted(curves.steady_state["network"].items())
        )
        print(f"{name}: diverged={curves.diverged}/{scenario.runs}  {steady}")
    for kind, path in sorted(result.paths.items()):
        print(f"{kind}: {path}")
    return 1 if result.any_fully_diverged else 0


def _cmd_check_prox(args) -> int:
    report = check_prox(args.cases, args.seed)
    print(
        f"{report.cases} cases in {report.elapsed_s:.2f}s: "
        f"max |prox - oracle| = {report.max_deviation:.3e}, "
        f"max objective excess = {report.max_objective_excess:.3e}"
    )
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def _cmd_list_presets() -> int:
    for name, description in list_presets().items():
        print(f"{name}: {description}")
    return 0


def _cmd_stability(args) -> int:
    scenario = load_scenario(args.scenario)
    model, _ = realize_model(scenario)
    covs = model_covariances(scenario, model)
    dim = _scenario_dim(scenario)
    for v in scenario.variants:
        rep = stability_report(
            scenario.topology, scenario.weights, v.mu, covs,
            v.regularizer.eta, v.regularizer, dim,
        )
        print(f"variant {v.name}: all_ok={rep.all_ok}  b_norm={rep.b_norm:.4f}")
        if rep.bias.vacuous:
            print("  bias bounds: vacuous (transition norm >= 1)")
        else:
            print(
                f"  bias bounds: l1 <= {rep.bias.l1:.4g}, "
                f"reweighted <= {rep.bias.reweighted:.4g}"
            )
        for k in range(scenario.topology.n_nodes):
            flag = "ok" if rep.ok[k] else "UNSTABLE"
            print(f"  node {k:2d}: mu={rep.mu[k]:.4g} bound={rep.bounds[k]:.4g} {flag}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "check-prox":
            return _cmd_check_prox(args)
        if args.command == "list-presets":
            return _cmd_list_presets()
        if args.command == "stability":
            return _cmd_stability(args)
    except ProxdiffError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
