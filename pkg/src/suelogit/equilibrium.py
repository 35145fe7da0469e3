"""Stochastic network loading and SUE-logit equilibrium.

Path utilities are ``V = delta_x.T @ v + psl_beta * ln PS`` with link
utilities ``v = theta_t * t + Z @ theta_z``. Path flows at equilibrium follow
logit shares of ``V`` evaluated at the travel times their own link flows
produce. The equilibrium is found by maximising the concave program

    theta_t * sum_a int_0^{x_a} t_a(u) du + x . (Z theta_z)
        + psl_beta * <f, ln PS> - <f, ln f>

over the demand-feasible path flows, moving each iteration from the current
flows towards a fresh stochastic loading (Frank-Wolfe style with a line
search, or with MSA weights).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .network import (
    IncidenceData,
    Network,
    NetworkError,
    ODDemand,
    PathSet,
    bpr_integral,
    build_incidence,
    path_size_log,
)
from .paths import k_shortest_paths, path_cost, utility_link_costs

__all__ = [
    "Coefficients",
    "EquilibriumOptions",
    "EquilibriumState",
    "NonConvergenceWarning",
    "link_utilities",
    "path_probabilities",
    "stochastic_network_loading",
    "inner_objective",
    "solve_sue_logit",
    "column_generation_schedule",
    "column_generation_step",
    "path_selection_step",
]

TRAVEL_TIME = "tt"


class NonConvergenceWarning(RuntimeWarning):
    """An iterative solver hit its iteration limit before its tolerance."""


@dataclass(frozen=True)
class Coefficients:
    """Utility weights: ``theta_t`` on travel time, ``theta_z`` on the
    exogenous attributes, ``psl_beta`` on the path-size correction."""

    theta_t: float
    theta_z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    psl_beta: float = 1.0

    def __post_init__(self):
        tz = np.array(self.theta_z, dtype=float, copy=True).reshape(-1)
        tz.setflags(write=False)
        object.__setattr__(self, "theta_z", tz)
        object.__setattr__(self, "theta_t", float(self.theta_t))
        object.__setattr__(self, "psl_beta", float(self.psl_beta))
        if not (math.isfinite(self.theta_t) and np.all(np.isfinite(tz)) and math.isfinite(self.psl_beta)):
            raise ValueError("coefficients must be finite")
        if self.psl_beta < 0:
            raise ValueError("psl_beta must be >= 0")

    @classmethod
    def from_vector(cls, vector, psl_beta: float = 1.0) -> "Coefficients":
        vector = np.asarray(vector, dtype=float).reshape(-1)
        return cls(vector[0], vector[1:], psl_beta)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.theta_t], self.theta_z])

    def __len__(self):
        return 1 + self.theta_z.size

    @staticmethod
    def names(network: Network) -> list[str]:
        return [TRAVEL_TIME, *network.attribute_names]

    def __eq__(self, other):
        if not isinstance(other, Coefficients):
            return NotImplemented
        return (self.psl_beta == other.psl_beta
                and np.array_equal(self.as_vector(), other.as_vector()))

    def __hash__(self):
        return hash((tuple(self.as_vector()), self.psl_beta))


def link_utilities(theta: Coefficients, t, Z) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != t.shape[0]:
        raise NetworkError(f"attribute matrix shape {Z.shape} does not match {t.shape[0]} links")
    if Z.shape[1] != theta.theta_z.size:
        raise NetworkError(f"{theta.theta_z.size} attribute weights for {Z.shape[1]} attributes")
    return theta.theta_t * t + Z @ theta.theta_z


def path_probabilities(v, incidence: IncidenceData, ps_log=None, psl_beta: float = 1.0) -> np.ndarray:
    """Per-OD logit shares of path utilities, max-shifted within each OD."""
    if incidence.n_paths == 0 or np.any(np.diff(incidence.od_ptr) == 0):
        raise NetworkError("every OD pair needs at least one path")
    V = incidence.delta_x.T @ np.asarray(v, dtype=float)
    if ps_log is not None and psl_beta != 0:
        V = V + psl_beta * np.asarray(ps_log)
    V = V - incidence.expand(incidence.od_max(V))
    e = np.exp(V)
    return e / incidence.expand(incidence.od_sum(e))


def _demand_vector(q) -> np.ndarray:
    return q.q if isinstance(q, ODDemand) else np.asarray(q, dtype=float)


def stochastic_network_loading(theta: Coefficients, incidence: IncidenceData, q, t, Z, ps_log=None):
    """One logit loading at fixed travel times; returns ``(x, f, p)``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("travel times must be positive")
    p = path_probabilities(link_utilities(theta, t, Z), incidence, ps_log, theta.psl_beta)
    f = incidence.expand(_demand_vector(q)) * p
    x = incidence.delta_x @ f
    return x, f, p


def _entropy(f):
    f = np.asarray(f, dtype=float)
    pos = f > 0
    return float(np.dot(f[pos], np.log(f[pos])))


def inner_objective(x, f, theta: Coefficients, network: Network, ps_log=None) -> float:
    """Value of the equilibrium program at flows ``(x, f)``; ``0 ln 0 = 0``."""
    x = np.asarray(x, dtype=float)
    value = theta.theta_t * float(np.sum(bpr_integral(network, x)))
    if theta.theta_z.size:
        value += float(x @ (network.Z @ theta.theta_z))
    if ps_log is not None and theta.psl_beta != 0:
        value += theta.psl_beta * float(np.dot(f, ps_log))
    return value - _entropy(f)


@dataclass(frozen=True)
class EquilibriumOptions:
    """Solver settings.

    ``method`` is ``"fw"`` (line search on a lambda grid, refined by a
    bounded scalar search between the neighbouring grid points) or ``"msa"``.
    ``initial`` is ``"snl"`` (loading at free-flow times) or ``"random"``
    (random demand-feasible path flows drawn with ``seed``).
    """

    method: str = "fw"
    grid_step: float = 0.01
    refine: bool = True
    max_iter: int = 100
    tol: float = 1e-4
    initial: str = "snl"
    seed: int | None = None
    objective_tol: float | None = None

    def __post_init__(self):
        if self.method not in ("fw", "msa"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.grid_step <= 1:
            raise ValueError("grid_step must be in (0, 1]")
        if self.max_iter < 1 or self.tol <= 0:
            raise ValueError("max_iter must be >= 1 and tol > 0")
        if self.initial not in ("snl", "random"):
            raise ValueError(f"unknown initial loading {self.initial!r}")


@dataclass(frozen=True, eq=False)
class EquilibriumState:
    """Flows at equilibrium.

    ``p`` are the logit shares at the travel times ``t`` and ``f``, ``x`` the
    flows they load, so ``(x, f, p)`` is exactly consistent with ``t``;
    ``t`` itself reproduces ``x`` through the link performance functions up
    to the solver tolerance (``gap``).
    """

    x: np.ndarray
    f: np.ndarray
    p: np.ndarray
    t: np.ndarray
    theta: Coefficients
    incidence: IncidenceData
    ps_log: np.ndarray
    paths: PathSet
    od: ODDemand
    objective_trace: tuple = ()
    converged: bool = True
    iterations: int = 0
    gap: float = 0.0

    def path_flows(self, od_pair) -> np.ndarray:
        w = self.od.index[od_pair]
        lo, hi = self.incidence.od_ptr[w], self.incidence.od_ptr[w + 1]
        return self.f[lo:hi]


def _random_path_flows(incidence: IncidenceData, qv, rng) -> np.ndarray:
    shares = rng.gamma(1.0, size=incidence.n_paths) + 1e-3
    shares = shares / incidence.expand(incidence.od_sum(shares))
    return incidence.expand(qv) * shares


def _line_search(slope, phi, step, refine):
    """Maximiser of a concave ``phi`` on [0, 1] from its derivative ``slope``.

    The pair of grid points where the slope turns negative brackets the
    maximiser; ``refine`` then solves ``slope = 0`` inside that cell,
    otherwise the better of the two bracketing grid points is taken.
    Working with the slope rather than objective values keeps the search
    accurate when the objective is large compared with its variation.
    """
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    if slope(grid[0]) < 0:
        return 0.0
    if slope(grid[-1]) >= 0:
        return 1.0
    # slope is nonincreasing: bisect over grid indices for the sign change
    i, j = 0, grid.size - 1
    while j - i > 1:
        m = (i + j) // 2
        if slope(grid[m]) >= 0:
            i = m
        else:
            j = m
    lo, hi = grid[i], grid[j]
    if refine:
        return float(brentq(slope, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps))
    return lo if phi(lo) >= phi(hi) else hi


def solve_sue_logit(network: Network, od: ODDemand, paths: PathSet, theta: Coefficients,
                    options: EquilibriumOptions | None = None, *, exogenous_travel_times=None,
                    incidence: IncidenceData | None = None, ps_log=None) -> EquilibriumState:
    """SUE-logit link and path flows for fixed coefficients and path sets.

    Each iteration loads the network at the travel times of the current
    flows and moves to ``lam * f_current + (1 - lam) * f_loaded``.
    Stops when the relative difference between current and re-loaded link
    flows drops below ``options.tol`` (or, if ``options.objective_tol`` is
    set, when the relative change of the objective drops below it). Hitting ``max_iter`` returns a state with
    ``converged=False`` and emits :class:`NonConvergenceWarning`.

    With ``exogenous_travel_times`` (or zero BPR ``alpha`` everywhere) the
    travel times do not depend on flows and the result is one loading.
    """
    options = options or EquilibriumOptions()
    if incidence is None:
        incidence = build_incidence(network, paths, od)
        ps_log = path_size_log(network, incidence)
    elif ps_log is None:
        ps_log = path_size_log(network, incidence)
    qv = od.q
    Z = network.Z

    def snl(t):
        return stochastic_network_loading(theta, incidence, qv, t, Z, ps_log)

    def finish(t, trace, converged, iterations, gap):
        x, f, p = snl(t)
        return EquilibriumState(x=x, f=f, p=p, t=np.asarray(t, dtype=float), theta=theta,
                                incidence=incidence, ps_log=ps_log, paths=paths, od=od,
                                objective_trace=tuple(trace), converged=converged,
                                iterations=iterations, gap=gap)

    if exogenous_travel_times is not None:
        t = np.asarray(exogenous_travel_times, dtype=float)
        if t.shape != (network.n_links,):
            raise NetworkError("exogenous travel times must have one entry per link")
        return finish(t, [], True, 1, 0.0)
    if not np.any(network.bpr_alpha > 0):
        return finish(network.free_flow_time, [], True, 1, 0.0)

    def objective(x, f):
        return inner_objective(x, f, theta, network, ps_log)

    log_q = np.log(np.where(qv > 0, qv, 1.0))

    def log_loading(t):
        V = incidence.delta_x.T @ link_utilities(theta, t, Z) + theta.psl_beta * ps_log
        V = V - incidence.expand(incidence.od_max(V))
        return V - incidence.expand(np.log(incidence.od_sum(np.exp(V))) - log_q)

    if options.initial == "random":
        f = _random_path_flows(incidence, qv, np.random.default_rng(options.seed))
        x = incidence.delta_x @ f
    else:
        x, f, _ = snl(network.free_flow_time)
    trace = [objective(x, f)]
    converged = False
    gap = math.inf
    it = 0
    for it in range(1, options.max_iter + 1):
        x_new, f_new, _ = snl(network.travel_times(x))
        gap = float(np.linalg.norm(x_new - x) / max(np.linalg.norm(x), 1e-300))
        if gap < options.tol:
            converged = True
            break
        if options.method == "msa":
            lam = 1.0 - 1.0 / (it + 1)
        else:
            dx, df = x - x_new, f - f_new

            def phi(lam):
                return objective(x_new + lam * dx, f_new + lam * df)

            def slope(lam):
                # d/dlam = sum df * (V - ln f); V is replaced by the log of the
                # flows a loading at x(lam) would give, which differs from V by
                # a per-OD constant that df sums to zero against
                fl = f_new + lam * df
                with np.errstate(divide="ignore", invalid="ignore"):
                    terms = np.where(df == 0, 0.0,
                                     df * (log_loading(network.travel_times(x_new + lam * dx)) - np.log(fl)))
                return float(np.sum(terms))

            lam = _line_search(slope, phi, options.grid_step, options.refine)
        x = x_new + lam * (x - x_new)
        f = f_new + lam * (f - f_new)
        trace.append(objective(x, f))
        rel = abs(trace[-1] - trace[-2]) / max(abs(trace[-2]), 1e-300)
        if options.objective_tol is not None and rel < options.objective_tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"SUE-logit did not converge in {options.max_iter} iterations (gap {gap:.3g})",
                      NonConvergenceWarning, stacklevel=2)
    return finish(network.travel_times(x), trace, converged, it, gap)


def column_generation_schedule(od: ODDemand, coverage: float = 0.3, per_iteration: float = 0.03):
    """Split the highest-demand ``coverage`` share of OD pairs into consecutive
    batches of about ``per_iteration`` of all pairs; iteration ``i`` uses batch
    ``i % len(batches)``."""
    if not 0 < per_iteration <= coverage <= 1:
        raise ValueError("need 0 < per_iteration <= coverage <= 1")
    order = sorted(range(len(od)), key=lambda i: (-od.q[i], od.pairs[i]))
    top = order[: max(1, int(round(coverage * len(od))))]
    n_batches = max(1, min(len(top), int(round(coverage / per_iteration))))
    return [tuple(od.pairs[i] for i in chunk) for chunk in np.array_split(top, n_batches)]


def _path_utility(path, v):
    return -path_cost(path, -np.asarray(v))


def column_generation_step(network: Network, paths: PathSet, theta: Coefficients, t,
                           od_subset: Sequence[tuple[int, int]], k_g: int) -> PathSet:
    """Add the ``k_g`` best paths under the current link utilities to each OD
    in ``od_subset``; paths already present are not duplicated."""
    if k_g <= 0 or not od_subset:
        return paths
    v = link_utilities(theta, t, network.Z)
    found = k_shortest_paths(network, utility_link_costs(v), od_subset, k_g,
                             rescore=lambda p: -_path_utility(p, v))
    return paths.merge(found)


def path_selection_step(network: Network, paths: PathSet, theta: Coefficients, t, k_s: int,
                        od_subset: Sequence[tuple[int, int]] | None = None) -> PathSet:
    """Keep the ``k_s`` highest-utility paths of each OD (stored order is
    preserved; ties go to the lexicographically smaller link sequence)."""
    if k_s < 1:
        raise ValueError("k_s must be >= 1")
    v = link_utilities(theta, t, network.Z)
    updates = {}
    for w in (paths.od_pairs if od_subset is None else od_subset):
        plist = paths[w]
        if len(plist) <= k_s:
            continue
        ranked = sorted(plist, key=lambda p: (-_path_utility(p, v), p))[:k_s]
        keep = set(ranked)
        updates[w] = [p for p in plist if p in keep]
    return paths.replace(updates) if updates else paths

