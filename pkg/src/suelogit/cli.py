"""Command-line front end.

Subcommands: ``equilibrate``, ``estimate``, ``scan``, ``simulate`` and
``montecarlo``. Options can also come from an INI file given with
``--config``; command-line flags take precedence over the file, which takes
precedence over built-in defaults.

Exit codes: 0 success, 1 input error, 2 numerical non-convergence,
3 identifiability failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import platform
import sys
import time
import warnings
from dataclasses import replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__
from .equilibrium import Coefficients, EquilibriumOptions, NonConvergenceWarning, solve_sue_logit
from .estimation import (
    EstimationOptions,
    FrozenTimesModel,
    NonIdentifiabilityWarning,
    ObservedCounts,
    bilevel_optimization,
    scan_objective,
)
from .inference import DegreesOfFreedomError, IdentifiabilityError, infer
from .io import InputError, read_counts, read_demand, read_network, write_csv, write_json, _csv_rows, _num
from .network import NetworkError, ODDemand
from .paths import initial_path_set
from .synthetic import (
    BUILTIN_NAMES,
    LARGE_NETWORK_ESTIMATION,
    MONTE_CARLO_ESTIMATION,
    PRESETS,
    YANG_DISTORTED_OD,
    DGPConfig,
    MonteCarloConfig,
    builtin_network,
    generate_counts,
    preset_configs,
    run_monte_carlo,
    yang_observed_links,
)

log = logging.getLogger("suelogit")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGENCE, EXIT_IDENTIFIABILITY = 0, 1, 2, 3


class NonConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _add_inputs(p, counts=False):
    g = p.add_argument_group("inputs")
    g.add_argument("--network", required=False,
                   help=f"builtin name ({', '.join(BUILTIN_NAMES)}) or a TNTP/CSV link file")
    g.add_argument("--od", help="demand file (TNTP trips or CSV origin,destination,demand)")
    g.add_argument("--attributes", help="attribute CSV link_id,<attr>,...")
    g.add_argument("--k-paths", type=int, default=3, help="shortest paths per OD pair for file networks")
    if counts:
        g.add_argument("--counts", help="count CSV link_id,count; synthesized on builtin networks if omitted")
        g.add_argument("--scenario", choices=("default", "distorted-od"), default="default",
                       help="distorted-od: yang network with the distorted demand and five counted links")


def _add_theta(p):
    p.add_argument("--theta-t", type=float, help="travel time coefficient")
    p.add_argument("--theta", action="append", default=[], metavar="NAME=VALUE",
                   help="attribute coefficient; repeatable")


def _add_equilibrium(p):
    g = p.add_argument_group("equilibrium")
    g.add_argument("--method", choices=("fw", "msa"), default="fw")
    g.add_argument("--tol", type=float, default=None)
    g.add_argument("--max-iter", type=int, default=None, help="default 1000 for equilibrate")


def _add_dgp(p):
    g = p.add_argument_group("synthetic counts")
    g.add_argument("--noise", type=float, default=0.10, help="count noise sd as a share of the mean count")
    g.add_argument("--coverage", type=float, default=1.0, help="share of links with counts")
    g.add_argument("--od-noise", type=float, default=0.0)
    g.add_argument("--od-scale", type=float, default=1.0)
    g.add_argument("--irrelevant", type=int, default=0, help="number of irrelevant Gaussian attributes")


def _add_estimation(p, single_run=True):
    g = p.add_argument_group("estimation")
    g.add_argument("--first-iterations", type=int, default=None)
    g.add_argument("--second-iterations", type=int, default=None)
    g.add_argument("--first-method", choices=("ngd", "lm"), default=None)
    g.add_argument("--second-method", choices=("ngd", "lm"), default=None)
    g.add_argument("--learning-rate", type=float, default=None)
    g.add_argument("--lm-damping", type=float, default=None)
    g.add_argument("--bilevel-iterations", type=int, default=None)
    g.add_argument("--alpha", type=float, default=0.1, help="significance level")
    if single_run:
        g.add_argument("--theta0", type=float, nargs="+", default=None, help="starting coefficients")
        g.add_argument("--free", nargs="+", default=None, help="coefficients to estimate (others stay at theta0)")
        g.add_argument("--exogenous-times", default=None,
                       help="'truth', 'free-flow' or a CSV link_id,travel_time; times stay fixed")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="suelogit", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI file with option defaults")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("equilibrate", parents=[common], help="solve the logit stochastic equilibrium")
    _add_inputs(p)
    _add_theta(p)
    _add_equilibrium(p)
    p.add_argument("--initial", choices=("snl", "random"), default="snl")

    p = sub.add_parser("estimate", parents=[common], help="estimate utility coefficients from counts")
    _add_inputs(p, counts=True)
    _add_theta(p)
    _add_equilibrium(p)
    _add_dgp(p)
    _add_estimation(p)

    p = sub.add_parser("scan", parents=[common], help="objective and derivatives along one coefficient")
    _add_inputs(p, counts=True)
    _add_theta(p)
    _add_equilibrium(p)
    _add_dgp(p)
    p.add_argument("--coefficient", default="tt")
    p.add_argument("--min", dest="grid_min", type=float, default=-15.0)
    p.add_argument("--max", dest="grid_max", type=float, default=15.0)
    p.add_argument("--step", dest="grid_step", type=float, default=0.1)

    p = sub.add_parser("simulate", parents=[common], help="synthetic counts from a known equilibrium")
    _add_inputs(p)
    _add_theta(p)
    _add_equilibrium(p)
    _add_dgp(p)

    p = sub.add_parser("montecarlo", parents=[common], help="repeated estimation on synthetic counts")
    p.add_argument("--network", default="siouxfalls", choices=BUILTIN_NAMES)
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--levels", type=float, nargs="+", default=None)
    p.add_argument("--replicates", type=int, default=30)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--theta0-halfwidth", type=float, default=1.0)
    p.add_argument("--exogenous", action="store_true", help="fix travel times at the true equilibrium")
    _add_dgp(p)
    _add_estimation(p, single_run=False)
    return parser


# ---------------------------------------------------------------- config

def _true_values():
    return {"1", "true", "yes", "on"}


def _apply_config(parser, subparser, args, argv):
    """Re-parse with INI values installed as subparser defaults."""
    if not args.config:
        return args
    path = Path(args.config)
    if not path.exists():
        raise InputError(f"{path}: file not found")
    ini = configparser.ConfigParser()
    try:
        ini.read(path)
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from exc
    actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config")}
    sections = [s for s in ini.sections() if s != args.command] + ([args.command] if ini.has_section(args.command) else [])
    defaults = {}
    for section in sections:
        for key, raw in ini.items(section):
            dest = key.replace("-", "_")
            action = actions.get(dest) or actions.get({"min": "grid_min", "max": "grid_max",
                                                      "step": "grid_step"}.get(dest, ""))
            if action is None:
                if section == args.command or section in ("run", "common"):
                    raise InputError(f"{path}: unknown option {key!r} in [{section}]")
                continue
            defaults[action.dest] = _convert(action, raw, path, key)
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _convert(action, raw, path, key):
    try:
        if isinstance(action, (argparse._StoreTrueAction,)):
            return raw.strip().lower() in _true_values()
        if isinstance(action, argparse._CountAction):
            return int(raw)
        conv = action.type or str
        if action.nargs in ("+", "*"):
            return [conv(v) for v in raw.replace(",", " ").split()]
        if isinstance(action, argparse._AppendAction):
            return [v.strip() for v in raw.split(",") if v.strip()]
        value = conv(raw.strip())
    except ValueError as exc:
        raise InputError(f"{path}: bad value for {key!r}: {raw!r}") from exc
    if action.choices is not None and value not in action.choices:
        raise InputError(f"{path}: {key} must be one of {list(action.choices)}")
    return value


# ---------------------------------------------------------------- inputs

class _Problem:
    """Network, demand, path set and reference coefficients of a run."""

    def __init__(self, network, od, paths, theta, builtin=None, od_source="file"):
        self.network, self.od, self.paths, self.theta = network, od, paths, theta
        self.builtin = builtin
        self.od_source = od_source


def _load_problem(args) -> _Problem:
    if not args.network:
        raise InputError("--network is required")
    key = args.network.lower().replace("-", "").replace("_", "")
    if key in BUILTIN_NAMES and not Path(args.network).exists():
        b = builtin_network(key)
        od, source = b.od, f"builtin:{b.name}"
        if getattr(args, "scenario", "default") == "distorted-od":
            if b.name != "yang":
                raise InputError("the distorted-od scenario needs --network yang")
            od, source = ODDemand.from_dict({w: float(q) for w, q in YANG_DISTORTED_OD.items()}), "builtin:yang:distorted"
        if args.od:
            od, source = read_demand(args.od), f"file:{args.od}"
        return _Problem(b.network, od, b.paths, b.theta_true, b.name, source)
    if not Path(args.network).exists():
        raise InputError(f"{args.network}: not a builtin network and no such file")
    if not args.od:
        raise InputError("--od is required with a network file")
    network = read_network(args.network, args.attributes)
    od = read_demand(args.od)
    paths = initial_path_set(network, od, args.k_paths)
    return _Problem(network, od, paths, Coefficients(-1.0, np.zeros(len(network.attribute_names))),
                    od_source=f"file:{args.od}")


def _theta_from_args(args, problem) -> Coefficients:
    names = Coefficients.names(problem.network)
    theta = problem.theta.as_vector().copy()
    if theta.size != len(names):
        theta = np.concatenate([theta, np.zeros(len(names) - theta.size)])
    if args.theta_t is not None:
        theta[0] = args.theta_t
    for item in args.theta:
        name, sep, value = item.partition("=")
        if not sep or name.strip() not in names:
            raise InputError(f"--theta {item!r}: expected NAME=VALUE with NAME in {names}")
        try:
            theta[names.index(name.strip())] = float(value)
        except ValueError as exc:
            raise InputError(f"--theta {item!r}: value is not a number") from exc
    return Coefficients.from_vector(theta)


def _equilibrium_options(args, base: EquilibriumOptions) -> EquilibriumOptions:
    changes = {"method": args.method}
    if args.tol is not None:
        changes["tol"] = args.tol
    if args.max_iter is not None:
        changes["max_iter"] = args.max_iter
    if getattr(args, "initial", None):
        changes.update(initial=args.initial, seed=args.seed)
    return replace(base, **changes)


def _dgp(args, exogenous=False) -> DGPConfig:
    return DGPConfig(noise_fraction=args.noise, coverage=args.coverage, od_noise_fraction=args.od_noise,
                     od_scale=args.od_scale, irrelevant_attributes=args.irrelevant,
                     exogenous_times=exogenous, seed=args.seed)


def _read_times(path, network):
    header, rows = _csv_rows(path)
    if header[:2] != ["link_id", "travel_time"]:
        raise InputError(f"{path}: header must be link_id,travel_time")
    t = np.full(network.n_links, np.nan)
    for lineno, row in rows:
        lid = int(_num(row[0], path, lineno, "link_id"))
        if lid not in network.link_index:
            raise InputError(f"{path}:{lineno}: unknown link {lid}")
        t[network.link_index[lid]] = _num(row[1], path, lineno, "travel_time")
    if np.isnan(t).any():
        raise InputError(f"{path}: travel times missing for some links")
    return t


class _Timer:
    def __init__(self):
        self.stages = {}

    def __call__(self, name):
        timer = self

        class _Stage:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                timer.stages[name] = timer.stages.get(name, 0.0) + time.perf_counter() - self.t0

        return _Stage()


def _counts_and_truth(args, problem, timer):
    """Observed counts plus the true equilibrium state (None for file counts)."""
    theta = _theta_from_args(args, problem)
    eq = _equilibrium_options(args, EquilibriumOptions(tol=1e-10, max_iter=1000))
    if args.counts:
        observed = read_counts(args.counts)
        if not observed:
            raise DegreesOfFreedomError(f"{args.counts}: no observed counts, so no degrees of freedom")
        counts = ObservedCounts.from_mapping(problem.network, observed)
        return counts, None, theta
    if problem.builtin is None:
        raise InputError("--counts is required with a network file")
    rng = np.random.default_rng(args.seed)
    network = problem.network
    with timer("truth"):
        # counts come from the undistorted demand; the estimator sees problem.od
        od_true = builtin_network(problem.builtin).od
        counts, truth = generate_counts(network, od_true, problem.paths, theta, _dgp(args), rng, eq)
    if args.scenario == "distorted-od":
        if counts.n != network.n_links:
            raise InputError("the distorted-od scenario fixes the counted links; leave --coverage at 1")
        counts = ObservedCounts.from_flows(network, counts.values, yang_observed_links(network))
    return counts, truth, theta


def _exogenous_times(source, problem, truth):
    if source is None:
        return None
    if source == "free-flow":
        return problem.network.free_flow_time.copy()
    if source == "truth":
        if truth is None:
            raise InputError("--exogenous-times truth needs synthetic counts on a builtin network")
        return truth.t.copy()
    return _read_times(source, problem.network)


def _estimation_options(args, base: EstimationOptions, n_coef) -> EstimationOptions:
    changes = {}
    for name in ("first_iterations", "second_iterations", "first_method", "second_method", "learning_rate",
                 "lm_damping", "bilevel_iterations", "free"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if getattr(args, "theta0", None) is not None:
        if len(args.theta0) != n_coef:
            raise InputError(f"--theta0 needs {n_coef} values")
        changes["theta0"] = tuple(args.theta0)
    return replace(base, **changes)


# ---------------------------------------------------------------- commands

def _write_equilibrium(out, state, network, prefix=""):
    write_csv(out / f"{prefix}links.csv", ["link_id", "flow", "travel_time"],
              [[link.id, state.x[i], state.t[i]] for i, link in enumerate(network.links)])
    rows = []
    pid = 0
    for w, (o, d) in enumerate(state.od.pairs):
        lo, hi = state.incidence.od_ptr[w], state.incidence.od_ptr[w + 1]
        for h in range(lo, hi):
            rows.append([pid, f"{o}-{d}", state.p[h], state.f[h]])
            pid += 1
    write_csv(out / f"{prefix}paths.csv", ["path_id", "od", "probability", "flow"], rows)


def cmd_equilibrate(args, out, timer):
    problem = _load_problem(args)
    theta = _theta_from_args(args, problem)
    options = _equilibrium_options(args, EquilibriumOptions(max_iter=1000))
    with timer("equilibrium"), warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        state = solve_sue_logit(problem.network, problem.od, problem.paths, theta, options)
    _write_equilibrium(out, state, problem.network)
    write_csv(out / "equilibrium_trace.csv", ["iteration", "objective"], list(enumerate(state.objective_trace)))
    log.info("equilibrium: %d iterations, gap %.3g", state.iterations, state.gap)
    summary = {"iterations": state.iterations, "gap": state.gap, "converged": state.converged,
               "theta": dict(zip(Coefficients.names(problem.network), theta.as_vector()))}
    if not state.converged:
        raise NonConvergenceError(f"equilibrium did not converge in {state.iterations} iterations "
                                  f"(gap {state.gap:.3g} > {options.tol:.3g})")
    return summary


def cmd_estimate(args, out, timer):
    problem = _load_problem(args)
    counts, truth, _ = _counts_and_truth(args, problem, timer)
    names = Coefficients.names(problem.network)
    base = LARGE_NETWORK_ESTIMATION if problem.builtin == "siouxfalls" else EstimationOptions()
    base = replace(base, equilibrium=_equilibrium_options(args, base.equilibrium))
    options = _estimation_options(args, base, len(names))
    k = len(options.free) if options.free else len(names)
    if counts.n <= k:
        raise DegreesOfFreedomError(f"{counts.n} counts cannot identify {k} coefficients")
    exo = _exogenous_times(args.exogenous_times, problem, truth)
    caught = []
    with timer("estimation"), warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NonIdentifiabilityWarning)
        result = bilevel_optimization(problem.network, problem.od, problem.paths, counts, options,
                                      exogenous_travel_times=exo)
    for w in caught:
        if issubclass(w.category, NonIdentifiabilityWarning):
            print(f"warning: {w.message}", file=sys.stderr)
    with timer("inference"):
        report = infer(result, alpha=args.alpha)
    unidentified = [n for n, e, i in zip(report.names, report.estimated, report.identified) if e and not i]
    unidentified += [n for n in result.non_identifiable if n not in unidentified]

    body = report.to_dict()
    body.update(objective=result.objective, od_source=problem.od_source, network=args.network,
                counts_source=args.counts or "synthetic", observed_links=list(counts.link_ids),
                exogenous_travel_times=args.exogenous_times, lm_damping=options.lm_damping,
                learning_rate=options.learning_rate, non_identifiable=unidentified,
                inner_nonconverged=result.inner_nonconverged)
    write_json(out / "report.json", body)
    write_csv(out / "trace.csv", result.trace.header, result.trace.rows())
    predicted = result.state.x[counts.index]
    write_csv(out / "residuals.csv", ["link_id", "count", "predicted", "residual"],
              [[lid, c, x, c - x] for lid, c, x in zip(counts.link_ids, counts.values, predicted)])
    print(report.table())
    if unidentified:
        print(f"warning: coefficients not identified: {', '.join(unidentified)}", file=sys.stderr)
        raise IdentifiabilityError("coefficients not identified", unidentified)
    return {"theta": result.as_dict(), "objective": result.objective}


def _grid(lo, hi, step):
    if not step > 0:
        raise InputError("--step must be > 0")
    if hi < lo:
        raise InputError("--max must be >= --min")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def cmd_scan(args, out, timer):
    grid = _grid(args.grid_min, args.grid_max, args.grid_step)
    problem = _load_problem(args)
    counts, truth, theta = _counts_and_truth(args, problem, timer)
    names = Coefficients.names(problem.network)
    if args.coefficient not in names:
        raise InputError(f"--coefficient must be one of {names}")
    if truth is None:
        eq = _equilibrium_options(args, EquilibriumOptions(tol=1e-10, max_iter=1000))
        truth = solve_sue_logit(problem.network, problem.od, problem.paths, theta, eq)
    elif problem.od is not truth.od:
        truth = solve_sue_logit(problem.network, problem.od, problem.paths, theta,
                                EquilibriumOptions(tol=1e-10, max_iter=1000), exogenous_travel_times=truth.t)
    model = FrozenTimesModel.from_state(problem.network, truth, counts)
    with timer("scan"):
        rows = scan_objective(model, theta.as_vector(), names.index(args.coefficient), grid)
    write_csv(out / "scan.csv", ["theta", "objective", "first", "second", "sign_first", "sign_second"],
              [[v, l, d1, d2, int(np.sign(d1)), int(np.sign(d2))] for v, l, d1, d2 in rows])
    return {"points": len(rows), "coefficient": args.coefficient}


def cmd_simulate(args, out, timer):
    problem = _load_problem(args)
    if args.irrelevant:
        from .synthetic import add_irrelevant_attributes
        problem.network = add_irrelevant_attributes(problem.network, args.irrelevant,
                                                    np.random.default_rng([args.seed, 0xA77]))
    theta = _theta_from_args(args, problem)
    eq = _equilibrium_options(args, EquilibriumOptions(tol=1e-10, max_iter=1000))
    with timer("simulate"), warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        counts, truth = generate_counts(problem.network, problem.od, problem.paths, theta, _dgp(args),
                                        np.random.default_rng(args.seed), eq)
    write_csv(out / "counts.csv", ["link_id", "count"], [[i, c] for i, c in zip(counts.link_ids, counts.values)])
    _write_equilibrium(out, truth, problem.network, prefix="true_")
    if problem.network.attribute_names:
        write_csv(out / "attributes.csv", ["link_id", *problem.network.attribute_names],
                  [[link.id, *problem.network.Z[i]] for i, link in enumerate(problem.network.links)])
    if not truth.converged:
        raise NonConvergenceError("equilibrium at the true coefficients did not converge")
    return {"observed": counts.n, "theta": dict(zip(Coefficients.names(problem.network), theta.as_vector()))}


def _replicate_rows(summary):
    for r in summary.replicates:
        yield [r.replicate, int(r.ok), *r.estimates, *r.t_stats, r.nrmse, r.objective, r.error] if r.ok else \
            [r.replicate, 0, *([math.nan] * 2 * len(summary.names)), math.nan, math.nan, r.error]


def cmd_montecarlo(args, out, timer):
    if args.replicates < 1:
        raise InputError("--replicates must be >= 1")
    base_est = MONTE_CARLO_ESTIMATION if args.network == "siouxfalls" else EstimationOptions()
    estimation = _estimation_options(args, base_est, 0)
    config = MonteCarloConfig(network=args.network, replicates=args.replicates, dgp=_dgp(args, args.exogenous),
                              estimation=estimation, theta0_halfwidth=args.theta0_halfwidth, alpha=args.alpha,
                              jobs=args.jobs)
    levels = args.levels
    if levels is not None and args.preset == "irrelevant-attrs":
        levels = [int(v) for v in levels]
    elif levels is not None and args.preset == "congestion":
        levels = [bool(v) for v in levels]
    runs = preset_configs(args.preset, config, levels) if args.preset else [(None, config)]
    summaries = []
    for level, cfg in runs:
        with timer(f"level={level}" if level is not None else "montecarlo"):
            s = run_monte_carlo(cfg)
        summaries.append((level, s))
        tag = "" if level is None else f"_{level:g}" if isinstance(level, float) else f"_{level}"
        header = ["replicate", "ok", *[f"est_{n}" for n in s.names], *[f"t_{n}" for n in s.names],
                  "nrmse", "objective", "error"]
        write_csv(out / f"replicates{tag}.csv", header, _replicate_rows(s))
        log.info("%s: FN %.3f FP %.3f NRMSE %.4f", cfg.label or "run", s.false_negative_rate,
                 s.false_positive_rate, s.mean_nrmse)
    names = summaries[0][1].names
    write_csv(out / "summary.csv",
              ["level", "false_negative_rate", "false_positive_rate", "mean_nrmse", "vot_bias", "failures",
               *[f"bias_{n}" for n in names]],
              [["" if lvl is None else lvl, s.false_negative_rate, s.false_positive_rate, s.mean_nrmse,
                math.nan if s.vot_bias is None else s.vot_bias, s.failures, *s.bias.values()]
               for lvl, s in summaries])
    write_json(out / "summary.json", {"preset": args.preset,
                                      "runs": [{"level": lvl, **s.as_dict()} for lvl, s in summaries]})
    return {"runs": len(summaries)}


COMMANDS = {"equilibrate": cmd_equilibrate, "estimate": cmd_estimate, "scan": cmd_scan,
            "simulate": cmd_simulate, "montecarlo": cmd_montecarlo}


def _versions():
    out = {"python": platform.python_version(), "suelogit": __version__}
    for pkg in ("numpy", "scipy"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(parser, parser._subparsers._group_actions[0].choices[args.command], args, argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    out = Path(args.out)
    timer = _Timer()
    status, message, summary = EXIT_OK, None, None
    try:
        summary = COMMANDS[args.command](args, out, timer)
    except (InputError, NetworkError, DegreesOfFreedomError, FileNotFoundError) as exc:
        status, message = EXIT_INPUT, str(exc)
    except NonConvergenceError as exc:
        status, message = EXIT_NONCONVERGENCE, str(exc)
    except IdentifiabilityError as exc:
        status, message = EXIT_IDENTIFIABILITY, str(exc)
    except ValueError as exc:
        status, message = EXIT_INPUT, str(exc)
    if message:
        print(f"error: {message}", file=sys.stderr)
    if status != EXIT_INPUT:
        config = {k: v for k, v in vars(args).items() if k != "command"}
        write_json(out / "runmeta.json", {"command": args.command, "argv": argv, "config": config,
                                          "seed": args.seed, "versions": _versions(),
                                          "wall_clock_seconds": timer.stages, "exit_code": status,
                                          "message": message, "summary": summary})
    return status


if __name__ == "__main__":
    sys.exit(main())
