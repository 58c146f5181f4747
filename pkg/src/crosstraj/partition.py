"""Seeded region-growing partition of the segment graph, and cluster batching.

K seed segments are picked by a farthest-point sweep (each new seed
maximizes BFS distance to all previous seeds), then clusters grow
breadth-first with the smallest cluster always extending next. That keeps
clusters connected on connected input and sizes close to N/K without any
multilevel machinery. Training batches are unions of k sampled clusters
with the adjacency induced inside the union.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import DataError, RoadNetwork


def default_cluster_count(n_segments: int) -> int:
    return min(n_segments, max(4, n_segments // 256))


@dataclass
class Partition:
    assignment: np.ndarray  # (N,) cluster id per segment
    k_clusters: int

    def clusters(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.k_clusters)]
        for seg, c in enumerate(self.assignment):
            out[int(c)].append(seg)
        return out

    def sizes(self) -> list[int]:
        return [len(c) for c in self.clusters()]


def _multi_source_depths(neighbors: list[list[int]], sources: list[int]) -> np.ndarray:
    dist = np.full(len(neighbors), -1, dtype=np.int64)
    q = deque()
    for s in sources:
        dist[s] = 0
        q.append(s)
    while q:
        u = q.popleft()
        for v in neighbors[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def partition(net: RoadNetwork, k_clusters: int, seed: int) -> Partition:
    """Assign every segment to one of k_clusters connected regions."""
    n = net.n
    if not (1 <= k_clusters <= n):
        raise ValueError(f"cluster count must be in 1..{n}, got {k_clusters}")
    nbrs = net.neighbors
    rng = np.random.default_rng(seed)

    seeds = [int(rng.integers(0, n))]
    while len(seeds) < k_clusters:
        dist = _multi_source_depths(nbrs, seeds)
        # unreachable segments are farthest of all; ties break to lowest id
        candidates = np.where(dist < 0, np.iinfo(np.int64).max, dist)
        candidates[seeds] = -1
        seeds.append(int(np.argmax(candidates)))

    assignment = np.full(n, -1, dtype=np.int64)
    frontiers: list[deque[int]] = [deque() for _ in range(k_clusters)]
    sizes = [0] * k_clusters
    heap: list[tuple[int, int]] = []  # (cluster size, cluster id)
    for c, s in enumerate(seeds):
        assignment[s] = c
        sizes[c] = 1
        frontiers[c].extend(v for v in nbrs[s] if assignment[v] < 0)
        heapq.heappush(heap, (1, c))
    while heap:
        size, c = heapq.heappop(heap)
        if size != sizes[c]:
            continue  # stale entry
        grew = False
        while frontiers[c]:
            v = frontiers[c].popleft()
            if assignment[v] >= 0:
                continue
            assignment[v] = c
            sizes[c] += 1
            frontiers[c].extend(u for u in nbrs[v] if assignment[u] < 0)
            grew = True
            break
        if grew or frontiers[c]:
            heapq.heappush(heap, (sizes[c], c))

    # disconnected leftovers: hand each remaining component to the smallest cluster
    for start in range(n):
        if assignment[start] >= 0:
            continue
        target = int(np.argmin(sizes))
        comp = [start]
        assignment[start] = target
        qq = deque([start])
        while qq:
            u = qq.popleft()
            for v in nbrs[u]:
                if assignment[v] < 0:
                    assignment[v] = target
                    comp.append(v)
                    qq.append(v)
        sizes[target] += len(comp)

    _rebalance(nbrs, assignment, sizes, k_clusters)
    return Partition(assignment=assignment, k_clusters=k_clusters)


def _stays_connected_without(nbrs, assignment, cluster: int, v: int) -> bool:
    members = [u for u in range(len(nbrs)) if assignment[u] == cluster and u != v]
    if not members:
        return False
    inside = set(members)
    seen = {members[0]}
    stack = [members[0]]
    while stack:
        u = stack.pop()
        for w in nbrs[u]:
            if w in inside and w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(members)


def _move_candidates(nbrs, assignment, donor: int, receiver: int):
    """Donor boundary segments adjacent to the receiver, lowest id first."""
    out = []
    for v in range(len(nbrs)):
        if assignment[v] != donor:
            continue
        if any(assignment[u] == receiver for u in nbrs[v]):
            out.append(v)
    return out


def _rebalance(nbrs, assignment, sizes, k_clusters: int) -> None:
    """Move boundary segments until sizes sit within 30% of N/K.

    Every move shifts one segment from a strictly larger donor to a smaller
    receiver (donor stays connected), so the squared-size potential strictly
    decreases and the loop terminates. Stops early when no legal move exists.
    """
    n = len(nbrs)
    mu = n / k_clusters
    lo, hi = 0.7 * mu, 1.3 * mu
    while True:
        order = sorted(range(k_clusters), key=lambda c: (sizes[c], c))
        small, big = order[0], order[-1]
        if sizes[small] >= lo and sizes[big] <= hi:
            return
        moved = False
        if sizes[small] < lo:
            donors = sorted(range(k_clusters), key=lambda c: (-sizes[c], c))
            for donor in donors:
                if sizes[donor] <= sizes[small] + 1:
                    break
                for v in _move_candidates(nbrs, assignment, donor, small):
                    if _stays_connected_without(nbrs, assignment, donor, v):
                        assignment[v] = small
                        sizes[donor] -= 1
                        sizes[small] += 1
                        moved = True
                        break
                if moved:
                    break
        else:  # shed from the oversized cluster into its smallest neighbor
            receivers = sorted((c for c in range(k_clusters) if c != big),
                               key=lambda c: (sizes[c], c))
            for receiver in receivers:
                if sizes[receiver] >= sizes[big] - 1:
                    break
                for v in _move_candidates(nbrs, assignment, big, receiver):
                    if _stays_connected_without(nbrs, assignment, big, v):
                        assignment[v] = receiver
                        sizes[big] -= 1
                        sizes[receiver] += 1
                        moved = True
                        break
                if moved:
                    break
        if not moved:
            return


@dataclass
class Subgraph:
    segments: list[int]                 # sorted original segment ids
    adjacency: list[tuple[int, int]]    # induced pairs, original ids
    cluster_ids: tuple[int, ...]


def sample_batch(part: Partition, k: int, seed, net: RoadNetwork | None = None) -> Subgraph:
    """Union of k distinct clusters chosen uniformly with the seeded generator.

    seed may be an integer or an advancing Generator (training loops pass
    the latter). With net given, the adjacency internal to the union is
    included.
    """
    if not (1 <= k <= part.k_clusters):
        raise ValueError(f"k must be in 1..{part.k_clusters}, got {k}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = tuple(int(c) for c in sorted(rng.choice(part.k_clusters, size=k, replace=False)))
    members = np.isin(part.assignment, chosen)
    segments = [int(i) for i in np.flatnonzero(members)]
    adjacency = induce_adjacency(net, segments) if net is not None else []
    return Subgraph(segments=segments, adjacency=adjacency, cluster_ids=chosen)


def induce_adjacency(net: RoadNetwork, segments: list[int]) -> list[tuple[int, int]]:
    inside = set(segments)
    return [(i, j) for i, j in net.adjacency if i in inside and j in inside]


def save_partition(part: Partition, path) -> None:
    lines = ["segment_id,cluster_id"]
    for seg, c in enumerate(part.assignment):
        lines.append(f"{seg},{int(c)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_partition(path) -> Partition:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "segment_id,cluster_id":
        raise DataError(f"{path}: bad or missing partition header")
    pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 2 fields")
        pairs.append((int(parts[0]), int(parts[1])))
    pairs.sort()
    if [p[0] for p in pairs] != list(range(len(pairs))):
        raise DataError(f"{path}: segment ids not dense")
    assignment = np.array([p[1] for p in pairs], dtype=np.int64)
    return Partition(assignment=assignment, k_clusters=int(assignment.max()) + 1 if len(pairs) else 0)
