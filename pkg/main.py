"""
Command-line entry point

    python main.py logz model.json
    python main.py map model.json --solver mincut
    python main.py sample-exact model.json --count 1000 --seed 7
    python main.py sample-seq model.json --mj-schedule 1000 --delta 0.05
    python main.py gen-spinglass --rows 10 --cols 10 --coupling 2 --seed 1 -o grid.json
    python main.py experiment error-vs-coupling --config plan.json
    python main.py check-inequality gumbel-poincare --params h=suite
    python main.py plot --in output/error-vs-coupling.csv --kind line -o fig1.svg

Results go to stdout as JSON; progress goes to stderr. Exit code 0 on
success, 2 on invalid input, 3 when a resource limit is hit.
"""

import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

import config
from bench import EXPERIMENTS, PLOT_KINDS, ExperimentPlan, SpinGlassConfig, emit_plot, generate_spin_glass, run_and_export
from concentration import (
    ScalarFunctionSpec,
    check_gumbel_poincare,
    check_modified_log_sobolev,
    check_poincare,
    constant_function,
    epsilon_delta_plan,
    function_suite,
    gaussian_density,
    gumbel_density,
    laplace_density,
    linear_function,
)
from errors import InvalidArgumentError, PMapError
from gumbel import RngStream
from model import DiscreteModel, iter_configurations, load_model, log_partition_exact, save_model
from perturbation import PerturbationKind, draw_perturbation, perturbed_max_full, vj_samples
from sampler import EstimatorConfig, empirical_distribution, sample_exact_many, sample_sequential_many
from solvers import SOLVERS, get_solver

logger = logging.getLogger(__name__)

DENSITIES = {"gaussian": gaussian_density, "laplace": laplace_density, "gumbel": gumbel_density}


def _labels(model: DiscreteModel, x: Sequence[int]) -> List[Any]:
    return list(model.decode(tuple(int(v) for v in x)))


def _emit(result: Any) -> None:
    print(json.dumps(result, indent=2))


# ============================================================================
# Subcommands
# ============================================================================

def cmd_logz(args) -> Dict[str, Any]:
    model = load_model(args.model)
    result: Dict[str, Any] = {"log_partition": log_partition_exact(model)}
    if args.samples:
        rng = RngStream(args.seed)
        mean, se = perturbed_max_full(model, args.samples, rng.spawn(0))
        upper = vj_samples(model, (), args.samples, rng.spawn(1), args.solver)
        result["full_perturbation"] = {"mean": mean, "standard_error": se, "M": args.samples}
        result["lowdim_upper_bound"] = {"mean": float(upper.mean()), "M": args.samples}
    return result


def cmd_map(args) -> Dict[str, Any]:
    model = load_model(args.model)
    table = None
    if args.perturb:
        table = draw_perturbation(model, PerturbationKind(args.perturb), RngStream(args.seed))
    solve = get_solver(args.solver)
    result = solve(model, table) if table is not None else solve(model)
    return {"argmax": _labels(model, result.argmax), "value": result.value, "solver": result.solver}


def _frequencies(model: DiscreteModel, probs) -> Dict[str, float]:
    return {json.dumps(_labels(model, x)): float(p) for x, p in zip(iter_configurations(model), probs) if p > 0}


def cmd_sample_exact(args) -> Dict[str, Any]:
    model = load_model(args.model)
    samples = sample_exact_many(model, args.count, RngStream(args.seed))
    result: Dict[str, Any] = {"count": args.count, "seed": args.seed,
                              "frequencies": _frequencies(model, empirical_distribution(samples, model))}
    if args.show_samples:
        result["samples"] = [_labels(model, x) for x in samples]
    return result


def _schedule(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise InvalidArgumentError(f"bad M_j schedule '{text}'") from e


def cmd_sample_seq(args) -> Dict[str, Any]:
    model = load_model(args.model)
    if args.epsilon is not None:
        plan = epsilon_delta_plan(model.sizes, args.epsilon, args.delta)
        estimator = EstimatorConfig.from_plan(plan, solver=args.solver)
    else:
        schedule = _schedule(args.mj_schedule)
        estimator = EstimatorConfig(M=schedule[0] if len(schedule) == 1 else schedule,
                                    delta=args.delta, solver=args.solver)
    traces = sample_sequential_many(model, estimator, args.count, args.seed, args.max_restarts, args.workers)
    accepted = [t.accepted for t in traces if t.accepted is not None]
    return {
        "estimator": {"M": estimator.M, "delta": estimator.delta, "solver": estimator.solver},
        "count": args.count,
        "accepted": len(accepted),
        "restarts": sum(t.restarts for t in traces),
        "budget_exhausted": sum(1 for t in traces if t.budget_exhausted),
        "clamped_steps": sum(t.clamped_steps for t in traces),
        "solver_calls": sum(t.solver_calls for t in traces),
        "samples": [_labels(model, x) for x in accepted],
    }


def cmd_gen_spinglass(args) -> Dict[str, Any]:
    cfg = SpinGlassConfig(rows=args.rows, cols=args.cols, coupling=args.coupling, seed=args.seed)
    model = generate_spin_glass(cfg)
    path = save_model(model, args.output)
    return {"path": path, "variables": model.n, "edges": len(model.pairwise)}


def cmd_experiment(args) -> Dict[str, Any]:
    plan = ExperimentPlan.from_json(args.config) if args.config else ExperimentPlan()
    for key in ("seed", "output_dir", "workers"):
        value = getattr(args, key)
        if value is not None:
            setattr(plan, key, value)
    return run_and_export(plan, args.experiment)


def _parse_params(pairs: Sequence[str]) -> Dict[str, str]:
    params = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise InvalidArgumentError(f"parameter '{pair}' is not key=value")
        params[key.strip()] = value.strip()
    return params


def _functions(name: str) -> List[ScalarFunctionSpec]:
    if name == "suite":
        return function_suite()
    named = {f.name: f for f in function_suite() + [linear_function(), constant_function()]}
    if name not in named:
        raise InvalidArgumentError(f"unknown test function '{name}' (choose from suite, {', '.join(named)})")
    return [named[name]]


def _float(params: Dict[str, str], key: str, default: Optional[float]) -> float:
    if key not in params:
        if default is None:
            raise InvalidArgumentError(f"missing parameter {key}=...")
        return default
    try:
        return float(params[key])
    except ValueError as e:
        raise InvalidArgumentError(f"{key} must be a number, got '{params[key]}'") from e


def cmd_check_inequality(args) -> Dict[str, Any]:
    params = _parse_params(args.params)
    functions = _functions(params.get("h", "suite"))
    if args.inequality == "poincare":
        density = params.get("density", "gumbel")
        if density not in DENSITIES:
            raise InvalidArgumentError(f"unknown density '{density}' (choose from {', '.join(DENSITIES)})")
        dens = DENSITIES[density]()
        eta = _float(params, "eta", 0.5)
        reports = [check_poincare(dens, h, eta) for h in functions]
    elif args.inequality == "gumbel-poincare":
        reports = [check_gumbel_poincare(h) for h in functions]
    else:
        lam = _float(params, "lambda", 0.01)
        rho = _float(params, "rho", 0.1)
        reports = [check_modified_log_sobolev(h, lam, rho) for h in functions]
    return {"reports": [r.to_dict() for r in reports], "all_hold": all(r.holds for r in reports)}


def cmd_plot(args) -> Dict[str, Any]:
    return {"path": emit_plot(args.input, args.kind, args.output)}


# ============================================================================
# Parser
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmap", description="Perturb-and-MAP Gibbs sampling toolkit")
    parser.add_argument("--log-level", default=None, help=f"logging level (default {config.LOG_LEVEL})")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, handler, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=config.DEFAULT_SEED, help="random seed")
        p.set_defaults(handler=handler)
        return p

    p = command("logz", cmd_logz, "exact log partition function (and optional perturbation estimates)")
    p.add_argument("model")
    p.add_argument("--samples", type=int, default=0, help="also estimate with this many perturbations")
    p.add_argument("--solver", choices=sorted(SOLVERS), default="brute")

    p = command("map", cmd_map, "MAP configuration")
    p.add_argument("model")
    p.add_argument("--solver", choices=sorted(SOLVERS), default="brute")
    p.add_argument("--perturb", choices=[k.value for k in PerturbationKind], default=None)

    p = command("sample-exact", cmd_sample_exact, "exact Gibbs samples from full perturbations")
    p.add_argument("model")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--show-samples", action="store_true")

    p = command("sample-seq", cmd_sample_seq, "sequential low-dimensional sampler")
    p.add_argument("model")
    p.add_argument("--mj-schedule", default="1000", help="one count, or comma-separated M_1..M_n")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--epsilon", type=float, default=None, help="plan M_j from epsilon and delta instead")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--max-restarts", type=int, default=config.MAX_RESTARTS)
    p.add_argument("--solver", choices=sorted(SOLVERS), default="brute")
    p.add_argument("--workers", type=int, default=None)

    p = command("gen-spinglass", cmd_gen_spinglass, "generate a grid spin glass model file")
    p.add_argument("--rows", type=int, default=10)
    p.add_argument("--cols", type=int, default=10)
    p.add_argument("--coupling", type=float, default=1.0)
    p.add_argument("-o", "--output", required=True)

    p = command("experiment", cmd_experiment, "run a benchmark experiment")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", default=None, help="JSON experiment plan")
    p.add_argument("--output-dir", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(seed=None)

    p = command("check-inequality", cmd_check_inequality, "numerical functional-inequality check")
    p.add_argument("inequality", choices=["poincare", "gumbel-poincare", "log-sobolev"])
    p.add_argument("--params", nargs="*", default=[],
                   help="key=value: h=<name|suite>, density=gaussian|laplace|gumbel, eta, lambda, rho")

    p = command("plot", cmd_plot, "SVG plot of a dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--kind", choices=sorted(PLOT_KINDS), required=True)
    p.add_argument("-o", "--output", required=True)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse the command line, run one subcommand and print its result as JSON.

    Args:
        argv: Arguments without the program name; sys.argv[1:] when None

    Returns:
        Exit code: 0 on success, otherwise the exit_code of the PMapError raised
        (2 invalid input, 3 enumeration cap exceeded)
    """
    args = build_parser().parse_args(argv)
    config.configure_logging(args.log_level)
    try:
        _emit(args.handler(args))
    except PMapError as e:
        logger.error(f"[ERROR] {e}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
