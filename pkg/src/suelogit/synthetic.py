"""Benchmark networks, a count-generating process and a Monte Carlo harness.

The four small networks reproduce the published topologies. Their free-flow
times, capacities and (for ``wang`` and ``lochan``) OD demands are fixture
values chosen for this package, not published data.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .equilibrium import Coefficients, EquilibriumOptions, EquilibriumState, solve_sue_logit
from .estimation import EstimationOptions, ObservedCounts, bilevel_optimization
from .inference import InferenceReport, infer
from .network import Link, Network, ODDemand, PathSet
from .paths import enumerate_paths, k_shortest_paths

__all__ = [
    "BuiltinNetwork",
    "BUILTIN_NAMES",
    "builtin_network",
    "two_link_network",
    "DGPConfig",
    "generate_counts",
    "perturb_od",
    "LARGE_NETWORK_ESTIMATION",
    "MONTE_CARLO_ESTIMATION",
    "MonteCarloConfig",
    "MonteCarloSummary",
    "ReplicateResult",
    "run_monte_carlo",
    "PRESETS",
    "preset_configs",
    "YANG_DISTORTED_OD",
]

BUILTIN_NAMES = ("toy", "wang", "lochan", "yang", "siouxfalls")


@dataclass(frozen=True, eq=False)
class BuiltinNetwork:
    name: str
    network: Network
    od: ODDemand
    paths: PathSet
    theta_true: Coefficients
    description: str = ""


def _links(rows, alpha=0.15, beta=4.0):
    return [Link(id=i + 1, from_node=o, to_node=d, free_flow_time=t0, capacity=cap,
                 bpr_alpha=alpha, bpr_beta=beta) for i, (o, d, t0, cap) in enumerate(rows)]


# (from, to, free-flow time, capacity)
_TOY = [(1, 3, 10, 400), (2, 3, 10, 400), (3, 4, 10, 400), (3, 4, 11, 400)]
_TOY_SYMMETRIC = [(1, 3, 10, 400), (2, 3, 10, 400), (3, 4, 10, 400), (3, 4, 10, 400)]
_TOY_OD = {(1, 4): 50.0, (2, 4): 100.0, (3, 4): 150.0}

_WANG = [(2, 1, 8, 150), (1, 2, 7, 150), (3, 4, 7, 150), (4, 3, 8, 150),
         (4, 1, 3, 150), (1, 4, 8, 150), (2, 3, 7, 150), (3, 2, 4, 150)]
_WANG_OD = {(1, 2): 30, (1, 3): 40, (1, 4): 20, (2, 1): 25, (2, 3): 35, (2, 4): 45,
            (3, 1): 40, (3, 2): 20, (3, 4): 30, (4, 1): 35, (4, 2): 40, (4, 3): 25}

_LOCHAN = [(1, 2, 4, 150), (2, 1, 1, 150), (2, 3, 4, 150), (3, 2, 7, 150), (3, 6, 2, 150),
           (6, 3, 7, 150), (6, 5, 7, 150), (5, 6, 3, 150), (5, 4, 1, 150), (4, 5, 3, 150),
           (4, 1, 3, 150), (1, 4, 6, 150), (2, 5, 8, 150), (5, 2, 5, 150)]
_LOCHAN_OD = {(1, 3): 40, (1, 4): 20, (1, 6): 50, (3, 1): 35, (3, 4): 45, (3, 6): 20,
              (4, 1): 25, (4, 3): 40, (4, 6): 35, (6, 1): 45, (6, 3): 25, (6, 4): 30}

_YANG = [(1, 2, 4, 500), (1, 4, 5, 500), (1, 5, 7, 400), (2, 3, 4, 500), (2, 5, 5, 400),
         (3, 6, 4, 500), (4, 5, 4, 400), (4, 7, 5, 500), (5, 6, 5, 400), (5, 8, 5, 400),
         (5, 9, 8, 400), (6, 9, 4, 500), (7, 8, 4, 500), (8, 9, 5, 500)]
_YANG_OD_PAIRS = [(o, d) for o in (1, 2, 4) for d in (6, 8, 9)]
_YANG_OD = dict(zip(_YANG_OD_PAIRS, (120, 150, 100, 130, 200, 90, 80, 180, 110)))
YANG_DISTORTED_OD = dict(zip(_YANG_OD_PAIRS, (100, 130, 120, 120, 170, 140, 110, 170, 105)))
YANG_OBSERVED_NODES = ((3, 6), (5, 6), (5, 8), (5, 9), (7, 8))
_YANG_MAX_PATHS = 6

SIOUX_FALLS_THETA = (-1.0, -6.0, -3.0)
SIOUX_FALLS_ATTRIBUTE_SEED = 20220419


def _small(name, rows, od, max_paths=None, description=""):
    network = Network(_links(rows))
    od = ODDemand.from_dict({w: float(q) for w, q in od.items()})
    paths = PathSet(enumerate_paths(network, od.pairs, max_paths=max_paths))
    return BuiltinNetwork(name, network, od, paths, Coefficients(-1.0), description)


def _siouxfalls():
    from .io import read_demand, read_tntp_network

    root = resources.files("suelogit") / "data" / "siouxfalls"
    with resources.as_file(root / "SiouxFalls_net.tntp") as p:
        links = read_tntp_network(p)
    with resources.as_file(root / "SiouxFalls_trips.tntp") as p:
        od = read_demand(p)
    rng = np.random.default_rng(SIOUX_FALLS_ATTRIBUTE_SEED)
    Z = np.column_stack([rng.uniform(0.0, 1.0, len(links)), rng.poisson(2.0, len(links))])
    network = Network(links, Z, ("c", "s"))
    paths = PathSet(k_shortest_paths(network, network.length, od.pairs, 3))
    theta = Coefficients(SIOUX_FALLS_THETA[0], SIOUX_FALLS_THETA[1:])
    return BuiltinNetwork("siouxfalls", network, od, paths, theta,
                          "Sioux Falls, 3 shortest paths by length per OD pair")


@lru_cache(maxsize=None)
def builtin_network(name: str, symmetric: bool = False) -> BuiltinNetwork:
    """Network, demand, path set and ground-truth coefficients by name.

    ``symmetric=True`` (toy only) makes the two parallel links identical, the
    case where travel time cannot be identified.
    """
    name = name.lower().replace("-", "").replace("_", "")
    if symmetric and name != "toy":
        raise ValueError("only the toy network has a symmetric variant")
    if name == "toy":
        return _small("toy", _TOY_SYMMETRIC if symmetric else _TOY, _TOY_OD,
                      description="two origins merging onto two parallel links")
    if name == "wang":
        return _small("wang", _WANG, _WANG_OD, description="four-node bidirectional ring")
    if name == "lochan":
        return _small("lochan", _LOCHAN, _LOCHAN_OD, description="two-by-three bidirectional grid")
    if name == "yang":
        return _small("yang", _YANG, _YANG_OD, max_paths=_YANG_MAX_PATHS,
                      description="nine-node one-way grid, at most 6 paths per OD pair")
    if name == "siouxfalls":
        return _siouxfalls()
    raise ValueError(f"unknown network {name!r}; choose from {BUILTIN_NAMES}")


def two_link_network(demand: float = 100.0, toll_on_first: bool = False) -> BuiltinNetwork:
    """One OD pair served by two parallel links of equal free-flow time.

    A unit toll attribute ``c`` sits on the second link unless
    ``toll_on_first``. Demand is far below capacity so times stay at free flow.
    """
    network = Network(_links([(1, 2, 10, 1e6), (1, 2, 10, 1e6)]),
                      [[1.0], [0.0]] if toll_on_first else [[0.0], [1.0]], ("c",))
    od = ODDemand.from_dict({(1, 2): float(demand)})
    paths = PathSet({(1, 2): ((0,), (1,))})
    return BuiltinNetwork("twolink", network, od, paths, Coefficients(0.0, [0.0]))


def yang_observed_links(network: Network) -> list[int]:
    """Link ids of the five sensors used in the distorted-demand scenario."""
    by_nodes = {(lk.from_node, lk.to_node): lk.id for lk in network.links}
    return [by_nodes[w] for w in YANG_OBSERVED_NODES]


@dataclass(frozen=True)
class DGPConfig:
    """Synthetic data settings.

    Count noise is Gaussian with standard deviation ``noise_fraction`` times
    the mean true count; negative draws are kept. ``coverage`` is the share
    of links observed. ``od_noise_fraction`` and ``od_scale`` distort the
    demand handed to the estimator, not the demand that generated the counts.
    """

    noise_fraction: float = 0.10
    coverage: float = 1.0
    od_noise_fraction: float = 0.0
    od_scale: float = 1.0
    irrelevant_attributes: int = 0
    exogenous_times: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("noise_fraction", "coverage", "od_noise_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if not self.od_scale > 0:
            raise ValueError("od_scale must be > 0")
        if self.irrelevant_attributes < 0:
            raise ValueError("irrelevant_attributes must be >= 0")


def add_irrelevant_attributes(network: Network, count: int, rng) -> Network:
    """Append ``count`` standard Gaussian attributes named ``u1, u2, ...``."""
    if count == 0:
        return network
    return network.add_attributes(rng.standard_normal((network.n_links, count)),
                                  [f"u{i + 1}" for i in range(count)])


def _sample_counts(truth: EquilibriumState, network: Network, dgp: DGPConfig, rng) -> ObservedCounts:
    n_obs = int(round(dgp.coverage * network.n_links))
    if n_obs < 1:
        raise ValueError("coverage leaves no observed link")
    index = np.arange(network.n_links) if n_obs == network.n_links else rng.choice(
        network.n_links, size=n_obs, replace=False)
    sigma = dgp.noise_fraction * float(np.mean(truth.x))
    noisy = truth.x + rng.normal(0.0, sigma, size=truth.x.size) if sigma > 0 else truth.x.copy()
    return ObservedCounts.from_flows(network, noisy, index)


def generate_counts(network: Network, od: ODDemand, paths: PathSet, theta_true: Coefficients,
                    dgp: DGPConfig, rng=None, equilibrium: EquilibriumOptions | None = None,
                    exogenous_travel_times=None):
    """Equilibrium at ``theta_true`` plus noisy counts on a random link subset.

    Returns ``(counts, truth_state)``.
    """
    rng = np.random.default_rng(dgp.seed) if rng is None else rng
    truth = solve_sue_logit(network, od, paths, theta_true,
                            equilibrium or EquilibriumOptions(tol=1e-10, max_iter=1000),
                            exogenous_travel_times=exogenous_travel_times)
    return _sample_counts(truth, network, dgp, rng), truth


def perturb_od(od: ODDemand, fraction: float = 0.0, scale: float = 1.0, rng=None) -> ODDemand:
    """Gaussian cell noise (sd ``fraction * mean(q)``, truncated at zero)
    followed by multiplication by ``scale``."""
    if not 0 <= fraction <= 1 or not scale > 0:
        raise ValueError("need 0 <= fraction <= 1 and scale > 0")
    q = od.q.copy()
    if fraction > 0:
        rng = np.random.default_rng() if rng is None else rng
        q = np.maximum(q + rng.normal(0.0, fraction * float(np.mean(q)), size=q.size), 0.0)
    return od.with_demand(q * scale)


LARGE_NETWORK_ESTIMATION = EstimationOptions(learning_rate=0.5)

# Sioux Falls counts are in the thousands, so J'J is of order 1e8 and unit
# damping leaves LM as a plain Gauss-Newton step, which overshoots from noisy
# starting points when many coefficients are free.
MONTE_CARLO_ESTIMATION = replace(LARGE_NETWORK_ESTIMATION, lm_damping=1e7)


@dataclass(frozen=True)
class MonteCarloConfig:
    """One Monte Carlo experiment.

    Starting points are drawn uniformly within ``theta0_halfwidth`` of the
    truth; irrelevant attributes start within the same band around zero.
    """

    network: str = "siouxfalls"
    replicates: int = 30
    dgp: DGPConfig = field(default_factory=DGPConfig)
    estimation: EstimationOptions = field(default_factory=lambda: MONTE_CARLO_ESTIMATION)
    theta0_halfwidth: float = 1.0
    alpha: float = 0.1
    jobs: int = 1
    label: str = ""

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass(frozen=True)
class ReplicateResult:
    replicate: int
    ok: bool
    estimates: tuple = ()
    t_stats: tuple = ()
    p_values: tuple = ()
    nrmse: float = math.nan
    objective: float = math.nan
    error: str = ""


@dataclass(frozen=True)
class MonteCarloSummary:
    config: MonteCarloConfig
    names: tuple
    theta_true: tuple
    replicates: tuple

    @property
    def successful(self) -> list[ReplicateResult]:
        return [r for r in self.replicates if r.ok]

    @property
    def failures(self) -> int:
        return sum(not r.ok for r in self.replicates)

    @property
    def estimates(self) -> np.ndarray:
        return np.array([r.estimates for r in self.successful]).reshape(-1, len(self.names))

    @property
    def p_values(self) -> np.ndarray:
        return np.array([r.p_values for r in self.successful]).reshape(-1, len(self.names))

    @property
    def bias(self) -> dict[str, float]:
        est = self.estimates
        return {n: float(est[:, i].mean() - self.theta_true[i]) for i, n in enumerate(self.names)}

    @property
    def vot_bias(self) -> float | None:
        """Bias of ``60 * theta_tt / theta_c`` when a cost attribute ``c`` exists."""
        if "c" not in self.names or self.theta_true[self.names.index("c")] == 0:
            return None
        it, ic = 0, self.names.index("c")
        est = self.estimates
        vot = 60 * est[:, it] / est[:, ic]
        return float(np.mean(vot) - 60 * self.theta_true[it] / self.theta_true[ic])

    @property
    def mean_nrmse(self) -> float:
        return float(np.mean([r.nrmse for r in self.successful]))

    def _rejections(self) -> np.ndarray:
        return self.p_values < self.config.alpha

    @property
    def false_negative_rate(self) -> float:
        relevant = np.array(self.theta_true) != 0
        if not relevant.any() or not self.successful:
            return math.nan
        return float(1.0 - self._rejections()[:, relevant].mean())

    @property
    def false_positive_rate(self) -> float:
        irrelevant = np.array(self.theta_true) == 0
        if not irrelevant.any() or not self.successful:
            return math.nan
        return float(self._rejections()[:, irrelevant].mean())

    def per_coefficient_rejection(self) -> dict[str, float]:
        rej = self._rejections()
        return {n: float(rej[:, i].mean()) for i, n in enumerate(self.names)}

    def as_dict(self) -> dict:
        return {
            "label": self.config.label,
            "network": self.config.network,
            "replicates": self.config.replicates,
            "failures": self.failures,
            "coefficients": list(self.names),
            "theta_true": list(self.theta_true),
            "bias": self.bias,
            "vot_bias": self.vot_bias,
            "mean_nrmse": self.mean_nrmse,
            "false_negative_rate": self.false_negative_rate,
            "false_positive_rate": self.false_positive_rate,
            "rejection_rate": self.per_coefficient_rejection(),
        }


@dataclass(frozen=True, eq=False)
class _Experiment:
    """Inputs shared by all replicates of one Monte Carlo run."""

    config: MonteCarloConfig
    network: Network
    od: ODDemand
    paths: PathSet
    theta_true: np.ndarray
    truth: EquilibriumState
    exogenous_times: np.ndarray | None


def _prepare(config: MonteCarloConfig) -> _Experiment:
    base = builtin_network(config.network)
    rng = np.random.default_rng([config.dgp.seed, 0xA77])
    network = add_irrelevant_attributes(base.network, config.dgp.irrelevant_attributes, rng)
    theta_true = np.concatenate([base.theta_true.as_vector(), np.zeros(config.dgp.irrelevant_attributes)])
    coef = Coefficients.from_vector(theta_true, config.estimation.psl_beta)
    truth = solve_sue_logit(network, base.od, base.paths, coef, EquilibriumOptions(tol=1e-10, max_iter=1000))
    exo = truth.t if config.dgp.exogenous_times else None
    return _Experiment(config, network, base.od, base.paths, theta_true, truth, exo)


def _run_replicate(exp: _Experiment, index: int) -> ReplicateResult:
    cfg = exp.config
    rng = np.random.default_rng(cfg.dgp.seed + index)
    try:
        counts = _sample_counts(exp.truth, exp.network, cfg.dgp, rng)
        od_est = perturb_od(exp.od, cfg.dgp.od_noise_fraction, 1.0 / cfg.dgp.od_scale, rng)
        theta0 = exp.theta_true + rng.uniform(-cfg.theta0_halfwidth, cfg.theta0_halfwidth, exp.theta_true.size)
        result = bilevel_optimization(exp.network, od_est, exp.paths, counts, cfg.estimation,
                                      theta0=theta0, exogenous_travel_times=exp.exogenous_times)
        report = infer(result, alpha=cfg.alpha)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return ReplicateResult(index, False, error=f"{type(exc).__name__}: {exc}")
    return ReplicateResult(index, True, tuple(result.theta.tolist()), tuple(report.t_stats.tolist()),
                           tuple(report.p_values.tolist()), report.nrmse, result.objective)


def _run_chunk(args):
    exp, indices = args
    return [_run_replicate(exp, i) for i in indices]


def run_monte_carlo(config: MonteCarloConfig) -> MonteCarloSummary:
    """Run ``config.replicates`` independent replicates.

    Replicate ``i`` draws everything from a generator seeded with
    ``dgp.seed + i``, so results do not depend on ``jobs``.
    """
    exp = _prepare(config)
    indices = list(range(config.replicates))
    if config.jobs == 1:
        results = [_run_replicate(exp, i) for i in indices]
    else:
        chunks = [indices[k::config.jobs] for k in range(config.jobs)]
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = [r for chunk in pool.map(_run_chunk, [(exp, c) for c in chunks if c]) for r in chunk]
    results.sort(key=lambda r: r.replicate)
    names = tuple(Coefficients.names(exp.network))
    return MonteCarloSummary(config, names, tuple(exp.theta_true.tolist()), tuple(results))


PRESETS = {
    "coverage": ("coverage", (0.25, 0.5, 0.75)),
    "count-noise": ("noise_fraction", (0.05, 0.10, 0.25)),
    "od-noise": ("od_noise_fraction", (0.05, 0.10, 0.20)),
    "od-scale": ("od_scale", (0.8, 0.9, 1.0, 1.1, 1.2)),
    "irrelevant-attrs": ("irrelevant_attributes", (0, 6)),
    "congestion": ("exogenous_times", (True, False)),
}


def preset_configs(preset: str, base: MonteCarloConfig, levels: Sequence | None = None) -> list[tuple[object, MonteCarloConfig]]:
    """Expand a named experiment into one config per level."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    attr, default_levels = PRESETS[preset]
    out = []
    for level in (default_levels if levels is None else levels):
        dgp = replace(base.dgp, **{attr: level})
        out.append((level, replace(base, dgp=dgp, label=f"{preset}={level}")))
    return out
