"""Road network primitives: links, BPR link performance, OD demand, path sets
and the sparse link-path / OD-path incidence matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Link",
    "Network",
    "ODDemand",
    "PathSet",
    "IncidenceData",
    "NetworkError",
    "bpr_travel_time",
    "bpr_integral",
    "build_incidence",
    "path_size_factors",
]


class NetworkError(ValueError):
    """Structurally invalid network, demand or path data."""


@dataclass(frozen=True)
class Link:
    id: int
    from_node: int
    to_node: int
    free_flow_time: float
    capacity: float
    bpr_alpha: float = 0.15
    bpr_beta: float = 4.0
    length: float | None = None
    is_connector: bool = False

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise NetworkError(f"link {self.id} is a self loop at node {self.from_node}")
        if not self.free_flow_time > 0:
            raise NetworkError(f"link {self.id}: free flow time must be > 0")
        if not self.capacity > 0:
            raise NetworkError(f"link {self.id}: capacity must be > 0")
        if self.bpr_alpha < 0 or self.bpr_beta < 1:
            raise NetworkError(f"link {self.id}: need alpha >= 0 and beta >= 1")
        if self.length is None:
            # connectors carry no distance; everything else falls back to free flow time
            object.__setattr__(self, "length", 0.0 if self.is_connector else float(self.free_flow_time))
        elif self.length < 0:
            raise NetworkError(f"link {self.id}: negative length")


def _check_flow(flow):
    flow = np.asarray(flow, dtype=float)
    if np.any(flow < 0):
        raise ValueError("link flows must be non-negative")
    return flow


def bpr_travel_time(link, flow):
    """BPR travel time ``t0 * (1 + alpha * (flow / capacity) ** beta)``.

    ``link`` is anything exposing ``free_flow_time``, ``capacity``,
    ``bpr_alpha`` and ``bpr_beta``: a single :class:`Link` with a scalar flow
    or a :class:`Network` with a vector of link flows.
    """
    flow = _check_flow(flow)
    t0 = link.free_flow_time
    return t0 * (1.0 + link.bpr_alpha * (flow / link.capacity) ** link.bpr_beta)


def bpr_integral(link, flow):
    """Closed-form integral of :func:`bpr_travel_time` from 0 to ``flow``."""
    flow = _check_flow(flow)
    t0, a, b, cap = link.free_flow_time, link.bpr_alpha, link.bpr_beta, link.capacity
    return t0 * flow + t0 * a * flow ** (b + 1) / ((b + 1) * cap**b)


class Network:
    """Directed road network with exogenous link attributes.

    Links keep the order they are given in; that order indexes every link
    vector (flows, travel times, rows of ``Z``) and path link sequences.

    Parameters
    ----------
    links : sequence of Link
    attributes : array_like, shape (n_links, n_attributes), optional
        Exogenous attribute matrix ``Z``. Rows of connector links are zeroed.
    attribute_names : sequence of str, optional
    nodes : iterable of int, optional
        Declared nodes. Defaults to the link endpoints.
    """

    def __init__(self, links: Sequence[Link], attributes=None, attribute_names: Sequence[str] = (), nodes=None):
        self.links = tuple(links)
        if not self.links:
            raise NetworkError("network has no links")
        ids = [lk.id for lk in self.links]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate link ids")
        endpoints = {n for lk in self.links for n in (lk.from_node, lk.to_node)}
        self.nodes = frozenset(endpoints if nodes is None else nodes)
        missing = endpoints - self.nodes
        if missing:
            raise NetworkError(f"links reference undeclared nodes {sorted(missing)}")

        names = tuple(attribute_names)
        if attributes is None:
            Z = np.zeros((len(self.links), len(names)))
        else:
            Z = np.array(attributes, dtype=float, copy=True)
            if Z.ndim == 1:
                Z = Z[:, None]
        if Z.shape[0] != len(self.links):
            raise NetworkError(f"attribute matrix has {Z.shape[0]} rows for {len(self.links)} links")
        if not names:
            names = tuple(f"z{k}" for k in range(Z.shape[1]))
        if len(names) != Z.shape[1]:
            raise NetworkError("attribute_names does not match the attribute matrix width")
        if not np.all(np.isfinite(Z)):
            raise NetworkError("attribute matrix has non-finite entries")
        Z[self.is_connector] = 0.0
        Z.setflags(write=False)
        self.Z = Z
        self.attribute_names = names
        self.link_index = {lid: i for i, lid in enumerate(ids)}

    def __repr__(self):
        return (f"Network(nodes={len(self.nodes)}, links={len(self.links)}, "
                f"attributes={list(self.attribute_names)})")

    @property
    def n_links(self) -> int:
        return len(self.links)

    def _array(self, name, dtype=float):
        arr = np.array([getattr(lk, name) for lk in self.links], dtype=dtype)
        arr.setflags(write=False)
        return arr

    @cached_property
    def free_flow_time(self) -> np.ndarray:
        return self._array("free_flow_time")

    @cached_property
    def capacity(self) -> np.ndarray:
        return self._array("capacity")

    @cached_property
    def bpr_alpha(self) -> np.ndarray:
        return self._array("bpr_alpha")

    @cached_property
    def bpr_beta(self) -> np.ndarray:
        return self._array("bpr_beta")

    @cached_property
    def length(self) -> np.ndarray:
        return self._array("length")

    @cached_property
    def is_connector(self) -> np.ndarray:
        return self._array("is_connector", dtype=bool)

    @cached_property
    def from_nodes(self) -> np.ndarray:
        return self._array("from_node", dtype=int)

    @cached_property
    def to_nodes(self) -> np.ndarray:
        return self._array("to_node", dtype=int)

    @cached_property
    def out_links(self) -> dict[int, tuple[int, ...]]:
        """Outgoing link indices per node, in link order."""
        out: dict[int, list[int]] = {n: [] for n in self.nodes}
        for i, lk in enumerate(self.links):
            out[lk.from_node].append(i)
        return {n: tuple(v) for n, v in out.items()}

    def travel_times(self, flows) -> np.ndarray:
        return bpr_travel_time(self, flows)

    def attribute(self, name: str) -> np.ndarray:
        return self.Z[:, self.attribute_names.index(name)]

    def with_attributes(self, attributes, attribute_names: Sequence[str]) -> "Network":
        """Copy of this network with a different attribute matrix."""
        return Network(self.links, attributes, attribute_names, self.nodes)

    def add_attributes(self, attributes, attribute_names: Sequence[str]) -> "Network":
        extra = np.asarray(attributes, dtype=float).reshape(self.n_links, -1)
        return self.with_attributes(np.hstack([self.Z, extra]), self.attribute_names + tuple(attribute_names))

    def select_attributes(self, attribute_names: Sequence[str]) -> "Network":
        cols = [self.attribute_names.index(n) for n in attribute_names]
        return self.with_attributes(self.Z[:, cols], attribute_names)


@dataclass(frozen=True)
class ODDemand:
    """Origin-destination demand, one entry per (origin, destination) pair."""

    pairs: tuple[tuple[int, int], ...]
    q: np.ndarray

    def __post_init__(self):
        pairs = tuple((int(o), int(d)) for o, d in self.pairs)
        q = np.array(self.q, dtype=float, copy=True).reshape(-1)
        if len(pairs) != q.size:
            raise NetworkError("demand vector length does not match the number of OD pairs")
        if len(set(pairs)) != len(pairs):
            raise NetworkError("duplicate OD pairs")
        if np.any(q < 0) or not np.all(np.isfinite(q)):
            raise NetworkError("OD demand must be finite and non-negative")
        q.setflags(write=False)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_dict(cls, demand: Mapping[tuple[int, int], float]) -> "ODDemand":
        return cls(tuple(demand), np.array(list(demand.values()), dtype=float))

    @classmethod
    def from_matrix(cls, matrix, nodes: Sequence[int] | None = None, keep_zeros=False) -> "ODDemand":
        matrix = np.asarray(matrix, dtype=float)
        nodes = list(range(1, matrix.shape[0] + 1)) if nodes is None else list(nodes)
        pairs, q = [], []
        for i, o in enumerate(nodes):
            for j, d in enumerate(nodes):
                if o != d and (keep_zeros or matrix[i, j] > 0):
                    pairs.append((o, d))
                    q.append(matrix[i, j])
        return cls(tuple(pairs), np.array(q))

    def __len__(self):
        return len(self.pairs)

    @property
    def total(self) -> float:
        return float(self.q.sum())

    @cached_property
    def index(self) -> dict[tuple[int, int], int]:
        return {w: i for i, w in enumerate(self.pairs)}

    def as_dict(self) -> dict[tuple[int, int], float]:
        return dict(zip(self.pairs, self.q.tolist()))

    def with_demand(self, q) -> "ODDemand":
        return ODDemand(self.pairs, q)

    def scaled(self, factor: float) -> "ODDemand":
        if not factor > 0:
            raise ValueError("scale factor must be positive")
        return ODDemand(self.pairs, self.q * factor)

    def positive(self) -> "ODDemand":
        """Drop pairs with zero demand."""
        keep = self.q > 0
        return ODDemand(tuple(w for w, k in zip(self.pairs, keep) if k), self.q[keep])


@dataclass(frozen=True)
class PathSet:
    """Per-OD ordered path lists; a path is a tuple of link indices.

    The global path order (columns of the incidence matrices) is OD-major:
    OD pairs in ``od_pairs`` order, then paths in their stored order.
    """

    paths: Mapping[tuple[int, int], tuple[tuple[int, ...], ...]] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for w, plist in self.paths.items():
            seen = set()
            uniq = []
            for p in plist:
                p = tuple(int(a) for a in p)
                if not p:
                    raise NetworkError(f"empty path for OD {w}")
                if p not in seen:
                    seen.add(p)
                    uniq.append(p)
            clean[(int(w[0]), int(w[1]))] = tuple(uniq)
        object.__setattr__(self, "paths", clean)

    def __getitem__(self, od):
        return self.paths.get(od, ())

    def __contains__(self, od):
        return od in self.paths

    def __len__(self):
        return sum(len(v) for v in self.paths.values())

    @property
    def od_pairs(self):
        return tuple(self.paths)

    def n_paths(self, od=None) -> int:
        return len(self) if od is None else len(self[od])

    def ordered(self, od: ODDemand):
        """Flat list of (od, path) in global order for the given demand."""
        return [(w, p) for w in od.pairs for p in self[w]]

    def replace(self, updates: Mapping[tuple[int, int], Iterable[Sequence[int]]]) -> "PathSet":
        new = dict(self.paths)
        for w, plist in updates.items():
            new[w] = tuple(tuple(p) for p in plist)
        return PathSet(new)

    def merge(self, extra: Mapping[tuple[int, int], Iterable[Sequence[int]]]) -> "PathSet":
        """Append new paths per OD, dropping duplicates."""
        new = dict(self.paths)
        for w, plist in extra.items():
            new[w] = tuple(new.get(w, ())) + tuple(tuple(p) for p in plist)
        return PathSet(new)

    def validate(self, network: Network):
        """Raise NetworkError unless every path is a connected walk between its OD endpoints
        with no repeated node."""
        n = network.n_links
        for (o, d), plist in self.paths.items():
            for p in plist:
                if min(p) < 0 or max(p) >= n:
                    raise NetworkError(f"path {p} of OD {(o, d)} references an unknown link")
                nodes = [network.links[p[0]].from_node]
                for a in p:
                    lk = network.links[a]
                    if lk.from_node != nodes[-1]:
                        raise NetworkError(f"path {p} of OD {(o, d)} is not connected")
                    nodes.append(lk.to_node)
                if nodes[0] != o or nodes[-1] != d:
                    raise NetworkError(f"path {p} does not join {o} to {d}")
                if len(set(nodes)) != len(nodes):
                    raise NetworkError(f"path {p} of OD {(o, d)} has a cycle")


@dataclass(frozen=True, eq=False)
class IncidenceData:
    """Sparse incidence matrices for a fixed path ordering.

    ``delta_x`` is links x paths, ``delta_q`` is OD pairs x paths, both CSC.
    ``od_of_path`` maps each path column to its OD row and ``od_ptr`` holds
    the contiguous column range of each OD (paths are grouped by OD).
    """

    delta_x: sp.csc_matrix
    delta_q: sp.csc_matrix
    od_of_path: np.ndarray
    od_ptr: np.ndarray
    path_list: tuple

    @property
    def n_paths(self) -> int:
        return self.delta_x.shape[1]

    @property
    def n_links(self) -> int:
        return self.delta_x.shape[0]

    @property
    def n_od(self) -> int:
        return self.delta_q.shape[0]

    def od_sum(self, values) -> np.ndarray:
        """Sum a path vector (or the rows of a path x k matrix) within each OD."""
        return np.add.reduceat(np.asarray(values, dtype=float), self.od_ptr[:-1], axis=0)

    def od_max(self, values) -> np.ndarray:
        return np.maximum.reduceat(np.asarray(values, dtype=float), self.od_ptr[:-1], axis=0)

    def expand(self, od_values) -> np.ndarray:
        """Broadcast per-OD values to the paths (``delta_q.T @ values``)."""
        return np.asarray(od_values)[self.od_of_path]


def build_incidence(network: Network, paths: PathSet, od: ODDemand) -> IncidenceData:
    """Build link-path and OD-path incidence matrices in global path order.

    Every OD pair in ``od`` must have at least one path.
    """
    n_links = network.n_links
    rows, cols, od_of_path, path_list = [], [], [], []
    ptr = [0]
    for w_idx, w in enumerate(od.pairs):
        plist = paths[w]
        if not plist:
            raise NetworkError(f"OD pair {w} has no paths")
        for p in plist:
            h = len(path_list)
            for a in p:
                if not 0 <= a < n_links:
                    raise NetworkError(f"path {p} of OD {w} references unknown link index {a}")
                rows.append(a)
                cols.append(h)
            od_of_path.append(w_idx)
            path_list.append((w, p))
        ptr.append(len(path_list))
    n_paths = len(path_list)
    delta_x = sp.csc_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_links, n_paths))
    # a path visiting a link twice would give entries of 2; paths are simple
    delta_x.data[:] = 1.0
    od_of_path = np.array(od_of_path, dtype=int)
    delta_q = sp.csc_matrix((np.ones(n_paths), (od_of_path, np.arange(n_paths))), shape=(len(od), n_paths))
    return IncidenceData(delta_x, delta_q, od_of_path, np.array(ptr, dtype=int), tuple(path_list))


def path_size_factors(paths: Sequence[Sequence[int]], link_lengths) -> np.ndarray:
    """Path-size factors for the paths of one OD pair.

    ``PS_h = sum_{a in h} (l_a / L_h) / N_a`` where ``N_a`` counts the paths in
    the set using link ``a``. A path sharing no link with the others gets 1.
    """
    if len(paths) == 0:
        raise ValueError("empty path list")
    lengths = np.asarray(link_lengths, dtype=float)
    usage: dict[int, int] = {}
    for p in paths:
        for a in set(p):
            usage[a] = usage.get(a, 0) + 1
    ps = np.empty(len(paths))
    for h, p in enumerate(paths):
        links = np.fromiter(p, dtype=int)
        L = lengths[links].sum()
        if not L > 0:
            raise ValueError(f"path {tuple(p)} has zero length")
        ps[h] = sum(lengths[a] / L / usage[a] for a in p)
    return ps


def path_size_log(network: Network, incidence: IncidenceData) -> np.ndarray:
    """``ln PS_h`` for every path column, computed within each OD's path set."""
    out = np.empty(incidence.n_paths)
    lengths = network.length
    ptr = incidence.od_ptr
    for w in range(incidence.n_od):
        lo, hi = ptr[w], ptr[w + 1]
        plist = [incidence.path_list[h][1] for h in range(lo, hi)]
        if len(plist) == 1:
            out[lo] = 0.0
            continue
        try:
            out[lo:hi] = np.log(path_size_factors(plist, lengths))
        except ValueError:
            # zero-length paths (connector-only) get no correction
            out[lo:hi] = 0.0
    return out
