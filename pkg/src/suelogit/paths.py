"""Path generation: Yen k-shortest simple paths and exhaustive enumeration.

Works on link indices so parallel links (several links joining the same node
pair) are handled. Ties are broken by the lexicographic order of the link
index sequence, which makes every result reproducible.
"""

from __future__ import annotations

import heapq
import math
import warnings
from typing import Iterable, Sequence

import numpy as np

from .network import Network, ODDemand, PathSet

__all__ = [
    "DisconnectedODWarning",
    "shortest_path",
    "k_shortest_paths",
    "enumerate_paths",
    "path_cost",
    "utility_link_costs",
]


class DisconnectedODWarning(UserWarning):
    """An OD pair has no path between its endpoints."""


def path_cost(path: Sequence[int], link_costs) -> float:
    return math.fsum(link_costs[a] for a in path)


def shortest_path(network: Network, link_costs, origin, destination,
                  banned_links=frozenset(), banned_nodes=frozenset()):
    """Dijkstra over links; returns ``(cost, link_tuple)`` or None.

    Labels are compared by (cost, link sequence) so equal-cost paths resolve
    to the lexicographically smallest link sequence.
    """
    if origin in banned_nodes:
        return None
    out_links = network.out_links
    to_nodes = network.to_nodes
    best: dict[int, tuple[float, tuple[int, ...]]] = {origin: (0.0, ())}
    heap = [(0.0, (), origin)]
    done = set()
    while heap:
        cost, seq, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == destination:
            return cost, seq
        for a in out_links.get(node, ()):
            if a in banned_links:
                continue
            nxt = int(to_nodes[a])
            if nxt in done or nxt in banned_nodes:
                continue
            label = (cost + link_costs[a], seq + (a,))
            if nxt not in best or label < best[nxt]:
                best[nxt] = label
                heapq.heappush(heap, (label[0], label[1], nxt))
    return None


def _nodes_of(network: Network, path, origin):
    nodes = [origin]
    for a in path:
        nodes.append(int(network.to_nodes[a]))
    return nodes


def _yen(network: Network, costs, origin, destination, k):
    first = shortest_path(network, costs, origin, destination)
    if first is None:
        return []
    found = [first[1]]
    candidates: list[tuple[float, tuple[int, ...]]] = []
    seen = {first[1]}
    while len(found) < k:
        prev = found[-1]
        prev_nodes = _nodes_of(network, prev, origin)
        for i in range(len(prev)):
            spur_node = prev_nodes[i]
            root = prev[:i]
            banned_links = {p[i] for p in found if len(p) > i and p[:i] == root}
            banned_nodes = frozenset(prev_nodes[:i])
            spur = shortest_path(network, costs, spur_node, destination, banned_links, banned_nodes)
            if spur is None:
                continue
            total = root + spur[1]
            if total not in seen:
                seen.add(total)
                heapq.heappush(candidates, (path_cost(total, costs), total))
        if not candidates:
            break
        _, best = heapq.heappop(candidates)
        found.append(best)
    return found


def k_shortest_paths(network: Network, link_costs, od_pairs: Iterable[tuple[int, int]], k: int,
                     rescore=None) -> dict[tuple[int, int], list[tuple[int, ...]]]:
    """Up to ``k`` loop-free minimum cost paths per OD pair, cheapest first.

    Negative link costs are shifted up by their minimum before searching;
    the shift changes the ranking of paths with different link counts, so
    the returned paths are re-sorted by their unshifted cost (or by
    ``rescore(path)`` when given).

    A disconnected OD pair gets an empty list and a
    :class:`DisconnectedODWarning`.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    costs = np.asarray(link_costs, dtype=float)
    if costs.shape != (network.n_links,) or not np.all(np.isfinite(costs)):
        raise ValueError("link_costs must be a finite vector with one entry per link")
    shift = min(0.0, float(costs.min()))
    search_costs = (costs - shift).tolist()
    score = rescore or (lambda p: path_cost(p, costs))
    out = {}
    for o, d in od_pairs:
        found = _yen(network, search_costs, o, d, k)
        if not found:
            warnings.warn(f"OD pair {(o, d)} is disconnected", DisconnectedODWarning, stacklevel=2)
        if shift < 0:
            found.sort(key=lambda p: (score(p), p))
        out[(o, d)] = found
    return out


def enumerate_paths(network: Network, od_pairs: Iterable[tuple[int, int]], link_costs=None,
                    max_paths: int | None = None) -> dict[tuple[int, int], list[tuple[int, ...]]]:
    """All loop-free paths per OD pair by depth-first search, sorted by
    (cost, link sequence). ``max_paths`` keeps only the cheapest ones."""
    costs = network.free_flow_time if link_costs is None else np.asarray(link_costs, dtype=float)
    out_links = network.out_links
    out = {}
    for o, d in od_pairs:
        found = []
        stack = [(o, (), frozenset([o]))]
        while stack:
            node, seq, visited = stack.pop()
            if node == d:
                found.append(seq)
                continue
            for a in out_links.get(node, ()):
                nxt = int(network.to_nodes[a])
                if nxt not in visited:
                    stack.append((nxt, seq + (a,), visited | {nxt}))
        found.sort(key=lambda p: (path_cost(p, costs), p))
        if max_paths is not None:
            found = found[:max_paths]
        if not found:
            warnings.warn(f"OD pair {(o, d)} is disconnected", DisconnectedODWarning, stacklevel=2)
        out[(o, d)] = found
    return out


def utility_link_costs(link_utilities) -> np.ndarray:
    """Costs for path search from link utilities (higher utility = cheaper)."""
    return -np.asarray(link_utilities, dtype=float)


def initial_path_set(network: Network, od: ODDemand, k: int, link_costs=None) -> PathSet:
    """k-shortest path sets for all OD pairs (free flow times by default)."""
    costs = network.free_flow_time if link_costs is None else link_costs
    return PathSet(k_shortest_paths(network, costs, od.pairs, k))
