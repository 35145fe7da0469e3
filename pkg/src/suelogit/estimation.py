"""Least-squares estimation of utility coefficients from link counts.

The outer objective is ``l(theta) = ||x_obs(theta) - counts||^2``. Its
derivatives are taken with travel times held at their current equilibrium
values, so they are exact derivatives of the stochastic loading map at
fixed times. Coefficient vectors are ordered ``[tt, *attribute_names]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .equilibrium import (
    Coefficients,
    EquilibriumOptions,
    EquilibriumState,
    column_generation_schedule,
    column_generation_step,
    path_selection_step,
    solve_sue_logit,
    stochastic_network_loading,
)
from .network import IncidenceData, Network, NetworkError, ODDemand, PathSet, build_incidence, path_size_log

__all__ = [
    "ObservedCounts",
    "EstimationOptions",
    "ColumnGenerationOptions",
    "TraceRecord",
    "ConvergenceTrace",
    "DerivativeBundle",
    "EstimationResult",
    "FrozenTimesModel",
    "NonIdentifiabilityWarning",
    "outer_objective",
    "path_attribute_matrix",
    "probability_jacobian_column",
    "probability_jacobian",
    "flow_jacobian",
    "outer_gradient",
    "second_derivative_diag",
    "ngd_step",
    "lm_step",
    "outer_level_optimization",
    "bilevel_optimization",
    "scan_objective",
]


class NonIdentifiabilityWarning(UserWarning):
    """A coefficient cannot be identified from the available counts."""


@dataclass(frozen=True, eq=False)
class ObservedCounts:
    """Counts on a subset of links; ``index`` holds link positions."""

    index: np.ndarray
    values: np.ndarray
    link_ids: tuple

    def __post_init__(self):
        idx = np.asarray(self.index, dtype=int).reshape(-1)
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if idx.size == 0:
            raise ValueError("at least one observed link is required")
        if idx.size != vals.size or len(self.link_ids) != idx.size:
            raise ValueError("counts, link ids and link positions differ in length")
        if np.unique(idx).size != idx.size:
            raise ValueError("duplicate observed links")
        if not np.all(np.isfinite(vals)):
            raise ValueError("counts must be finite")
        for arr in (idx, vals):
            arr.setflags(write=False)
        object.__setattr__(self, "index", idx)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "link_ids", tuple(self.link_ids))

    @classmethod
    def from_mapping(cls, network: Network, counts: Mapping[int, float]) -> "ObservedCounts":
        """Build from ``{link_id: count}``, ordered by link position."""
        unknown = [lid for lid in counts if lid not in network.link_index]
        if unknown:
            raise NetworkError(f"counts reference unknown links {sorted(unknown)}")
        ids = sorted(counts, key=network.link_index.get)
        return cls(np.array([network.link_index[i] for i in ids], dtype=int),
                   np.array([counts[i] for i in ids], dtype=float), tuple(ids))

    @classmethod
    def from_flows(cls, network: Network, x, index=None) -> "ObservedCounts":
        index = np.arange(network.n_links) if index is None else np.sort(np.asarray(index, dtype=int))
        return cls(index, np.asarray(x, dtype=float)[index], tuple(network.links[i].id for i in index))

    @property
    def n(self) -> int:
        return int(self.index.size)

    def with_values(self, values) -> "ObservedCounts":
        return ObservedCounts(self.index, values, self.link_ids)

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.link_ids, self.values.tolist()))


def outer_objective(x, counts: ObservedCounts) -> float:
    r = np.asarray(x, dtype=float)[counts.index] - counts.values
    return float(r @ r)


def path_attribute_matrix(incidence: IncidenceData, t, Z) -> np.ndarray:
    """Path-level attributes ``delta_x.T @ [t, Z]``, shape (paths, 1 + K)."""
    link_attrs = np.column_stack([np.asarray(t, dtype=float), np.asarray(Z, dtype=float)])
    return np.asarray(incidence.delta_x.T @ link_attrs)


def probability_jacobian_column(p, incidence: IncidenceData, z_path) -> np.ndarray:
    """Derivative of path probabilities with respect to the weight of one
    path-level attribute: ``p * (z - mean_p(z))`` with the mean taken
    under ``p`` within each OD."""
    p = np.asarray(p, dtype=float)
    z_path = np.asarray(z_path, dtype=float)
    if p.shape != z_path.shape or p.size != incidence.n_paths:
        raise ValueError("p and z_path must both have one entry per path")
    return p * (z_path - incidence.expand(incidence.od_sum(p * z_path)))


def probability_jacobian(p, incidence: IncidenceData, Z_path) -> np.ndarray:
    Z_path = np.asarray(Z_path, dtype=float)
    p = np.asarray(p, dtype=float)[:, None]
    return p * (Z_path - incidence.expand(incidence.od_sum(p * Z_path)))


def _probability_second_derivative(p, dp, incidence: IncidenceData, Z_path) -> np.ndarray:
    p = np.asarray(p)[:, None]
    zbar = incidence.expand(incidence.od_sum(p * Z_path))
    return dp * (Z_path - zbar) - p * incidence.expand(incidence.od_sum(dp * Z_path))


def flow_jacobian(incidence: IncidenceData, q, p, t, Z, observed_index, free=None) -> np.ndarray:
    """Jacobian of observed link flows with respect to the free coefficients
    at fixed travel times, shape (n_observed, n_free)."""
    Z_path = path_attribute_matrix(incidence, t, Z)
    if free is not None:
        Z_path = Z_path[:, np.asarray(free)]
    dp = probability_jacobian(p, incidence, Z_path)
    qv = q.q if isinstance(q, ODDemand) else np.asarray(q, dtype=float)
    dx = incidence.delta_x @ (incidence.expand(qv)[:, None] * dp)
    return np.asarray(dx)[np.asarray(observed_index)]


@dataclass(frozen=True, eq=False)
class DerivativeBundle:
    """Probability and flow derivatives at one coefficient vector."""

    dp: np.ndarray
    jacobian: np.ndarray
    residual: np.ndarray
    second_flow: np.ndarray | None = None

    @property
    def gradient(self) -> np.ndarray:
        return 2.0 * self.jacobian.T @ self.residual

    @property
    def second_diag(self) -> np.ndarray:
        if self.second_flow is None:
            raise ValueError("second derivatives were not computed")
        return 2.0 * (self.second_flow.T @ self.residual + np.sum(self.jacobian**2, axis=0))


class FrozenTimesModel:
    """Link flows as a function of the coefficient vector with travel times
    held fixed; the object the outer level works on."""

    def __init__(self, network: Network, od: ODDemand, incidence: IncidenceData, ps_log, t,
                 counts: ObservedCounts, psl_beta: float = 1.0):
        self.network = network
        self.od = od
        self.incidence = incidence
        self.ps_log = np.asarray(ps_log)
        self.t = np.asarray(t, dtype=float)
        self.counts = counts
        self.psl_beta = psl_beta
        self.Z_path = path_attribute_matrix(incidence, self.t, network.Z)
        self._q_path = incidence.expand(od.q)

    @classmethod
    def from_state(cls, network: Network, state: EquilibriumState, counts: ObservedCounts) -> "FrozenTimesModel":
        return cls(network, state.od, state.incidence, state.ps_log, state.t, counts, state.theta.psl_beta)

    @property
    def n_coefficients(self) -> int:
        return self.Z_path.shape[1]

    def coefficients(self, theta) -> Coefficients:
        return Coefficients.from_vector(theta, self.psl_beta)

    def load(self, theta):
        return stochastic_network_loading(self.coefficients(theta), self.incidence, self.od.q, self.t,
                                          self.network.Z, self.ps_log)

    def flows(self, theta) -> np.ndarray:
        return self.load(theta)[0]

    def objective(self, theta) -> float:
        return outer_objective(self.flows(theta), self.counts)

    def derivatives(self, theta, free=None, second=False, p=None) -> DerivativeBundle:
        if p is None:
            x, _, p = self.load(theta)
        else:
            x = self.incidence.delta_x @ (self._q_path * p)
        cols = np.arange(self.n_coefficients) if free is None else np.flatnonzero(_mask(free, self.n_coefficients))
        Z_path = self.Z_path[:, cols]
        dp = probability_jacobian(p, self.incidence, Z_path)
        obs = self.counts.index
        J = np.asarray(self.incidence.delta_x @ (self._q_path[:, None] * dp))[obs]
        residual = x[obs] - self.counts.values
        d2x = None
        if second:
            d2p = _probability_second_derivative(p, dp, self.incidence, Z_path)
            d2x = np.asarray(self.incidence.delta_x @ (self._q_path[:, None] * d2p))[obs]
        return DerivativeBundle(dp=dp, jacobian=J, residual=residual, second_flow=d2x)

    def structurally_fixed(self, tol: float = 1e-10) -> np.ndarray:
        """Coefficients whose path attribute is constant inside every OD, so
        no count can move them."""
        Z = self.Z_path
        means = self.incidence.od_sum(Z) / np.diff(self.incidence.od_ptr)[:, None]
        spread = np.abs(Z - self.incidence.expand(means)).max(axis=0)
        scale = np.maximum(np.abs(Z).max(axis=0), 1.0)
        return spread <= tol * scale


def outer_gradient(model: FrozenTimesModel, theta, free=None) -> np.ndarray:
    return model.derivatives(theta, free).gradient


def second_derivative_diag(model: FrozenTimesModel, theta, free=None) -> np.ndarray:
    return model.derivatives(theta, free, second=True).second_diag


def ngd_step(theta, gradient, eta: float):
    """Move ``eta`` against the unit gradient; returns ``(theta_new, stationary)``."""
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(gradient, dtype=float)
    norm = float(np.linalg.norm(g))
    if norm == 0.0 or not math.isfinite(norm):
        return theta.copy(), True
    return theta - eta * g / norm, False


def lm_step(theta, J, residual, damping: float) -> np.ndarray:
    """Levenberg-Marquardt update with ``residual = counts - flows``.

    ``damping = 0`` gives the Gauss-Newton step; a singular system then
    falls back to the least-norm solution with a warning.
    """
    if damping < 0:
        raise ValueError("damping must be >= 0")
    theta = np.asarray(theta, dtype=float)
    J = np.atleast_2d(np.asarray(J, dtype=float))
    r = np.asarray(residual, dtype=float)
    A = J.T @ J + damping * np.eye(J.shape[1])
    b = J.T @ r
    if damping == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
        warnings.warn("singular Gauss-Newton system; using the least-norm step",
                      NonIdentifiabilityWarning, stacklevel=2)
        return theta + np.linalg.lstsq(J, r, rcond=None)[0]
    return theta + np.linalg.solve(A, b)


@dataclass(frozen=True)
class ColumnGenerationOptions:
    """Path-set updates inside the inner level.

    ``k_new`` paths are generated for the OD batch of each bilevel iteration
    (batches cover the ``od_coverage`` share of pairs with highest demand,
    ``od_per_iteration`` of all pairs at a time); afterwards each OD keeps
    its ``max_paths`` best paths.
    """

    k_new: int = 2
    max_paths: int = 10
    od_coverage: float = 0.3
    od_per_iteration: float = 0.03


@dataclass(frozen=True)
class EstimationOptions:
    """Settings of the bilevel estimator.

    The outer level runs ``first_iterations`` steps of ``first_method`` then
    ``second_iterations`` of ``second_method`` (``"ngd"`` or ``"lm"``).

    With ``bilevel_iterations=None`` every step is followed by a fresh
    inner solve, so there are ``first + second + 1`` inner solves. With an
    integer ``I`` the whole outer schedule runs against frozen travel times
    between each of the ``I`` inner solves.
    """

    first_iterations: int = 10
    second_iterations: int = 10
    learning_rate: float = 2.0
    lm_damping: float = 1.0
    first_method: str = "ngd"
    second_method: str = "lm"
    bilevel_iterations: int | None = None
    theta0: Sequence[float] | None = None
    free: Sequence[str] | None = None
    sign_constraints: Mapping[str, int] | None = None
    equilibrium: EquilibriumOptions = field(default_factory=lambda: EquilibriumOptions(tol=1e-8, max_iter=500))
    column_generation: ColumnGenerationOptions | None = None
    psl_beta: float = 1.0

    def __post_init__(self):
        if self.first_iterations < 0 or self.second_iterations < 0:
            raise ValueError("iteration counts must be >= 0")
        if self.bilevel_iterations is not None and self.bilevel_iterations < 1:
            raise ValueError("bilevel_iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.lm_damping < 0:
            raise ValueError("lm_damping must be >= 0")
        for m in (self.first_method, self.second_method):
            if m not in ("ngd", "lm"):
                raise ValueError(f"unknown outer method {m!r}")
        for sign in (self.sign_constraints or {}).values():
            if sign not in (-1, 1):
                raise ValueError("sign constraints must be -1 or +1")

    @property
    def schedule(self) -> list[str]:
        return [self.first_method] * self.first_iterations + [self.second_method] * self.second_iterations


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    stage: str
    theta: tuple
    objective: float
    paths_added: int = 0
    paths_removed: int = 0


@dataclass
class ConvergenceTrace:
    names: list[str]
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, record: TraceRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    @property
    def best(self) -> TraceRecord:
        return min(self.records, key=lambda r: r.objective)

    def rows(self):
        for r in self.records:
            yield [r.iteration, r.stage, *r.theta, r.objective]

    @property
    def header(self):
        return ["iteration", "stage", *[f"theta_{n}" for n in self.names], "objective"]


@dataclass(eq=False)
class EstimationResult:
    """Best coefficients found, the equilibrium at them and the trace."""

    theta: np.ndarray
    names: list[str]
    free: np.ndarray
    objective: float
    state: EquilibriumState
    trace: ConvergenceTrace
    counts: ObservedCounts
    network: Network
    exogenous_travel_times: np.ndarray | None = None
    non_identifiable: list[str] = field(default_factory=list)
    inner_nonconverged: int = 0

    @property
    def coefficients(self) -> Coefficients:
        return Coefficients.from_vector(self.theta, self.state.theta.psl_beta)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.theta.tolist()))

    def model(self) -> FrozenTimesModel:
        return FrozenTimesModel.from_state(self.network, self.state, self.counts)


def _mask(free, n) -> np.ndarray:
    if free is None:
        return np.ones(n, dtype=bool)
    free = np.asarray(free)
    if free.dtype == bool:
        if free.size != n:
            raise ValueError("free mask has the wrong length")
        return free.copy()
    mask = np.zeros(n, dtype=bool)
    mask[free.astype(int)] = True
    return mask


def free_mask(names: Sequence[str], free: Sequence[str] | None) -> np.ndarray:
    if free is None:
        return np.ones(len(names), dtype=bool)
    unknown = set(free) - set(names)
    if unknown:
        raise ValueError(f"unknown coefficients {sorted(unknown)}; available: {list(names)}")
    return np.array([n in set(free) for n in names])


def _project_signs(theta, names, constraints):
    if not constraints:
        return theta
    theta = theta.copy()
    for i, n in enumerate(names):
        sign = constraints.get(n)
        if sign is not None and theta[i] * sign < 0:
            theta[i] = 0.0
    return theta


def _outer_step(method, model: FrozenTimesModel, theta, mask, options: EstimationOptions, names, p=None):
    cols = np.flatnonzero(mask)
    if cols.size == 0:
        return theta.copy(), True
    d = model.derivatives(theta, mask, p=p)
    new = theta.copy()
    stationary = False
    if method == "ngd":
        new[cols], stationary = ngd_step(theta[cols], d.gradient, options.learning_rate)
    else:
        new[cols] = lm_step(theta[cols], d.jacobian, -d.residual, options.lm_damping)
    return _project_signs(new, names, options.sign_constraints), stationary


def _identifiable_mask(model: FrozenTimesModel, mask, names):
    fixed = model.structurally_fixed() & mask
    if fixed.any():
        dropped = [names[i] for i in np.flatnonzero(fixed)]
        warnings.warn(f"coefficients {dropped} have no within-OD variation and are held fixed",
                      NonIdentifiabilityWarning, stacklevel=3)
    return mask & ~fixed, [names[i] for i in np.flatnonzero(fixed)]


def outer_level_optimization(model: FrozenTimesModel, theta0, options: EstimationOptions, free=None,
                             names: Sequence[str] | None = None):
    """Run the outer schedule on a frozen-times model.

    Returns ``(theta, objective, records)`` where ``theta`` is the iterate
    with the lowest objective among the post-update iterates (``theta0``
    when the schedule is empty) and ``records`` lists
    ``(step, method, theta, objective)``.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    names = list(names) if names is not None else [f"theta{i}" for i in range(theta.size)]
    mask, _ = _identifiable_mask(model, _mask(free, theta.size), names)
    records = []
    for k, method in enumerate(options.schedule, start=1):
        theta, _ = _outer_step(method, model, theta, mask, options, names)
        records.append((k, method, theta.copy(), model.objective(theta)))
    if not records:
        return theta, model.objective(theta), records
    best = min(records, key=lambda r: r[3])
    return best[2].copy(), best[3], records


def _stage_label(method_index, options):
    if method_index < options.first_iterations:
        return "non-refined"
    return "refined"


def bilevel_optimization(network: Network, od: ODDemand, paths: PathSet, counts: ObservedCounts,
                         options: EstimationOptions | None = None, *, theta0=None,
                         exogenous_travel_times=None) -> EstimationResult:
    """Alternate equilibrium solves and outer updates; return the best iterate.

    The returned state is the equilibrium computed at the returned
    coefficients. With ``exogenous_travel_times`` the inner level is a
    single stochastic loading at those times.
    """
    options = options or EstimationOptions()
    names = Coefficients.names(network)
    n_coef = len(names)
    if theta0 is None:
        theta0 = options.theta0 if options.theta0 is not None else np.zeros(n_coef)
    theta = np.asarray(theta0, dtype=float).reshape(-1).copy()
    if theta.size != n_coef:
        raise ValueError(f"theta0 has {theta.size} entries for coefficients {names}")
    mask = free_mask(names, options.free)
    if exogenous_travel_times is not None:
        exogenous_travel_times = np.asarray(exogenous_travel_times, dtype=float)

    cg = options.column_generation
    batches = column_generation_schedule(od, cg.od_coverage, cg.od_per_iteration) if cg else None
    trace = ConvergenceTrace(names)
    non_identifiable: list[str] = []
    nonconverged = 0
    t_current = network.free_flow_time if exogenous_travel_times is None else exogenous_travel_times
    best = None  # (objective, theta, state)
    stage_best = None

    def inner(theta_vec, paths, iteration):
        nonlocal nonconverged
        coef = Coefficients.from_vector(theta_vec, options.psl_beta)
        added = removed = 0
        if cg is not None:
            before = len(paths)
            paths = column_generation_step(network, paths, coef, t_current, batches[iteration % len(batches)],
                                           cg.k_new)
            added = len(paths) - before
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=RuntimeWarning)
            state = solve_sue_logit(network, od, paths, coef, options.equilibrium,
                                    exogenous_travel_times=exogenous_travel_times)
        if cg is not None:
            pruned = path_selection_step(network, paths, coef, state.t, cg.max_paths)
            removed = len(paths) - len(pruned)
            if removed:
                paths = pruned
                state = solve_sue_logit(network, od, paths, coef, options.equilibrium,
                                        exogenous_travel_times=exogenous_travel_times)
        if not state.converged:
            nonconverged += 1
        return state, paths, added, removed

    schedule = options.schedule
    nested = options.bilevel_iterations is not None
    n_iter = options.bilevel_iterations if nested else len(schedule) + 1

    for i in range(n_iter):
        state, paths, added, removed = inner(theta, paths, i)
        t_current = state.t
        ell = outer_objective(state.x, counts)
        if nested:
            stage = "bilevel"
        else:
            stage = "final" if i == len(schedule) else _stage_label(i, options)
        trace.append(TraceRecord(i, stage, tuple(theta.tolist()), ell, added, removed))
        if best is None or ell < best[0]:
            best = (ell, theta.copy(), state)
        if i == n_iter - 1:
            break
        model = FrozenTimesModel.from_state(network, state, counts)
        step_mask, dropped = _identifiable_mask(model, mask, names)
        non_identifiable.extend(n for n in dropped if n not in non_identifiable)
        if nested:
            theta, _, _ = outer_level_optimization(model, theta, options, step_mask, names)
            continue
        if i < options.first_iterations:
            if stage_best is None or ell < stage_best[0]:
                stage_best = (ell, theta.copy(), state)
        elif i == options.first_iterations and options.first_iterations > 0:
            # refined stage restarts from the best point of the first stage
            if ell < stage_best[0]:
                stage_best = (ell, theta.copy(), state)
            theta, state = stage_best[1].copy(), stage_best[2]
            model = FrozenTimesModel.from_state(network, state, counts)
        theta, _ = _outer_step(schedule[i], model, theta, step_mask, options, names, p=state.p)

    ell, theta_best, state_best = best
    return EstimationResult(theta=theta_best, names=names, free=mask, objective=ell, state=state_best,
                            trace=trace, counts=counts, network=network,
                            exogenous_travel_times=exogenous_travel_times,
                            non_identifiable=non_identifiable, inner_nonconverged=nonconverged)


def scan_objective(model: FrozenTimesModel, theta, coefficient: int, grid):
    """Objective and its first and second derivatives along one coefficient,
    others fixed at ``theta``. Returns an array with columns
    ``value, objective, first, second``."""
    theta = np.asarray(theta, dtype=float).copy()
    mask = np.zeros(theta.size, dtype=bool)
    mask[coefficient] = True
    rows = []
    for value in np.asarray(grid, dtype=float):
        theta[coefficient] = value
        d = model.derivatives(theta, mask, second=True)
        rows.append((value, float(d.residual @ d.residual), float(d.gradient[0]), float(d.second_diag[0])))
    return np.array(rows).reshape(-1, 4)
