"""Node-weighted shortest paths on the segment graph.

Path cost is the sum of node weights over the path, including both
endpoints. Ties are broken deterministically: the heap orders by
(distance, node id), and among equal-cost predecessors the lowest id wins.
"""

from __future__ import annotations

import heapq

import numpy as np


def dijkstra_node_weighted(neighbors: list[list[int]], weights,
                           origin: int, dest: int) -> tuple[list[int], float] | None:
    """Minimum-cost segment sequence from origin to dest, or None if unreachable.

    weights must be strictly positive; cost(path) = sum of weights[v] for v in path.
    """
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("node weights must be strictly positive")
    n = len(neighbors)
    if not (0 <= origin < n and 0 <= dest < n):
        raise ValueError(f"endpoint out of range: origin={origin}, dest={dest}")
    if origin == dest:
        return [origin], float(w[origin])

    dist = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    dist[origin] = w[origin]
    heap: list[tuple[float, int]] = [(dist[origin], origin)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == dest:
            break
        for v in neighbors[u]:
            if done[v]:
                continue
            nd = d + w[v]
            if nd < dist[v]:
                dist[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd, v))
            elif nd == dist[v] and parent[v] >= 0 and u < parent[v]:
                parent[v] = u
    if not done[dest]:
        return None
    path = [dest]
    while path[-1] != origin:
        path.append(int(parent[path[-1]]))
    path.reverse()
    return path, float(dist[dest])


def reachable_from(neighbors: list[list[int]], origin: int) -> np.ndarray:
    """Boolean mask of nodes reachable from origin (origin included)."""
    n = len(neighbors)
    seen = np.zeros(n, dtype=bool)
    seen[origin] = True
    frontier = [origin]
    while frontier:
        nxt = []
        for u in frontier:
            for v in neighbors[u]:
                if not seen[v]:
                    seen[v] = True
                    nxt.append(v)
        frontier = nxt
    return seen
