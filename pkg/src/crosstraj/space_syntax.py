"""Space Syntax measures on the segment graph, plus pairwise spatial relations.

Step depth is the unweighted hop distance between segments. The canonical
shortest path between two segments is defined from BFS distances with
lowest-id tie-breaking: walking back from the target, each predecessor is
the smallest-id neighbor one hop closer to the source. Choice counts, for
every segment, the ordered (source, target) pairs whose canonical path
passes through it as an interior node. Oracles elsewhere re-derive paths
from this same rule, so the tie-breaking is part of the contract.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import DataError, RoadNetwork


# ---------------------------------------------------------------------------
# measures


def bfs_depths(neighbors: list[list[int]], source: int) -> np.ndarray:
    """Hop distance from source to every segment; -1 where unreachable."""
    dist = np.full(len(neighbors), -1, dtype=np.int64)
    dist[source] = 0
    q = deque([source])
    while q:
        u = q.popleft()
        for v in neighbors[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def step_depth_all_pairs(net: RoadNetwork, hop_radius: int | None = None) -> np.ndarray:
    """Dense hop-count matrix; -1 marks unreachable (or beyond hop_radius)."""
    out = np.vstack([bfs_depths(net.neighbors, i) for i in range(net.n)]) \
        if net.n else np.zeros((0, 0), dtype=np.int64)
    if hop_radius is not None:
        out = np.where(out > hop_radius, -1, out)
    return out


def total_depth(net: RoadNetwork, hop_radius: int | None = None) -> np.ndarray:
    sd = step_depth_all_pairs(net, hop_radius)
    return np.where(sd > 0, sd, 0).sum(axis=1).astype(np.float64)


def node_count(net: RoadNetwork) -> np.ndarray:
    """Reachable other segments per segment (the NC term of integration)."""
    sd = step_depth_all_pairs(net)
    return (sd > 0).sum(axis=1).astype(np.float64)


def integration(net: RoadNetwork) -> np.ndarray:
    td = total_depth(net)
    nc = node_count(net)
    return np.where(td > 0, nc * nc / np.where(td > 0, td, 1.0), 0.0)


def connectivity(net: RoadNetwork) -> np.ndarray:
    return np.array([net.degree(i) for i in range(net.n)], dtype=np.float64)


def canonical_parents(neighbors: list[list[int]], source: int) -> tuple[np.ndarray, np.ndarray]:
    """(dist, parent) where parent[v] is the lowest-id neighbor one hop closer."""
    dist = bfs_depths(neighbors, source)
    parent = np.full(len(neighbors), -1, dtype=np.int64)
    for v in range(len(neighbors)):
        if dist[v] > 0:
            # neighbors are sorted, so the first qualifying one is the smallest
            for u in neighbors[v]:
                if dist[u] == dist[v] - 1:
                    parent[v] = u
                    break
    return dist, parent


def canonical_path(parent: np.ndarray, source: int, target: int) -> list[int] | None:
    """Segment sequence source..target along parent pointers, or None."""
    if source == target:
        return [source]
    if parent[target] < 0:
        return None
    path = [target]
    while path[-1] != source:
        path.append(int(parent[path[-1]]))
    path.reverse()
    return path


def choice(net: RoadNetwork) -> np.ndarray:
    """Ordered (j,k) pair count whose canonical path crosses each segment.

    Per source j, a segment i is interior to the canonical path j->k exactly
    when i is a proper ancestor of k in j's parent tree, so each node's
    contribution is its subtree size minus one.
    """
    out = np.zeros(net.n, dtype=np.float64)
    nbrs = net.neighbors
    for source in range(net.n):
        dist, parent = canonical_parents(nbrs, source)
        size = np.ones(net.n, dtype=np.int64)
        order = np.argsort(dist, kind="stable")[::-1]  # deepest first
        for v in order:
            if dist[v] > 0:
                size[parent[v]] += size[v]
        for v in range(net.n):
            if v != source and dist[v] > 0:
                out[v] += size[v] - 1
    return out


# ---------------------------------------------------------------------------
# sampled canonical OD paths and spatial relations


def sample_canonical_paths(net: RoadNetwork, m: int | None = None,
                           seed: int = 0) -> list[list[int]]:
    """Sample m canonical OD shortest paths (default m = 10 * N), seeded.

    OD pairs are uniform with origin != destination; unreachable pairs are
    redrawn. Gives up after 100 * m failed draws (heavily disconnected nets).
    """
    if net.n < 2:
        return []
    if m is None:
        m = 10 * net.n
    rng = np.random.default_rng(seed)
    cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    paths: list[list[int]] = []
    attempts = 0
    while len(paths) < m and attempts < 100 * m:
        attempts += 1
        o, d = (int(x) for x in rng.integers(0, net.n, size=2))
        if o == d:
            continue
        if o not in cache:
            cache[o] = canonical_parents(net.neighbors, o)
        _, parent = cache[o]
        path = canonical_path(parent, o, d)
        if path is not None:
            paths.append(path)
    return paths


@dataclass(frozen=True)
class SpatialRelation:
    bet: float    # fraction of sampled paths crossing both segments
    angle: float  # bearing difference folded to [0, pi], radians
    dist: float   # midpoint Euclidean distance, meters


def fold_angle(deg_a: float, deg_b: float) -> float:
    d = abs(deg_a - deg_b) % 360.0
    if d > 180.0:
        d = 360.0 - d
    return math.radians(d)


def spatial_relation(net: RoadNetwork, i: int, j: int,
                     sampled_paths: list[list[int]]) -> SpatialRelation:
    if i == j:
        raise ValueError("spatial relation requires two distinct segments")
    if sampled_paths:
        both = sum(1 for p in sampled_paths if i in p and j in p)
        bet = both / len(sampled_paths)
    else:
        bet = 0.0
    si, sj = net.segments[i], net.segments[j]
    angle = fold_angle(si.direction_deg, sj.direction_deg)
    dist = math.hypot(si.midpoint[0] - sj.midpoint[0], si.midpoint[1] - sj.midpoint[1])
    return SpatialRelation(bet, angle, dist)


def relation_matrix(net: RoadNetwork, edges: list[tuple[int, int]],
                    sampled_paths: list[list[int]]) -> np.ndarray:
    """Raw (bet, angle, dist) rows for each (i, j) edge."""
    membership: dict[int, set[int]] = {}
    for idx, p in enumerate(sampled_paths):
        for seg in p:
            membership.setdefault(seg, set()).add(idx)
    total = len(sampled_paths)
    mids = net.midpoints()
    brg = np.array([s.direction_deg for s in net.segments])
    out = np.zeros((len(edges), 3))
    for row, (i, j) in enumerate(edges):
        both = len(membership.get(i, set()) & membership.get(j, set()))
        out[row, 0] = both / total if total else 0.0
        out[row, 1] = fold_angle(brg[i], brg[j])
        out[row, 2] = float(np.hypot(*(mids[i] - mids[j])))
    return out


# ---------------------------------------------------------------------------
# feature assembly

CONTINUOUS_COLUMNS = ("total_depth", "integration", "connectivity", "choice", "length")


@dataclass
class FeatureTable:
    """Per-segment measures replicated across time slices.

    raw holds one row per segment in CONTINUOUS_COLUMNS order; normalized
    is the per-city z-score (columns with zero spread map to 0).
    """

    raw: np.ndarray                 # (N, 5)
    road_type_tags: list[str]       # per segment
    direction: np.ndarray           # (N,) bucket indices 0..7
    slices: tuple[int, ...]
    mean: np.ndarray                # (5,)
    std: np.ndarray                 # (5,) zeros kept as-is, see normalized

    @property
    def n(self) -> int:
        return self.raw.shape[0]

    @property
    def normalized(self) -> np.ndarray:
        safe = np.where(self.std > 0, self.std, 1.0)
        return (self.raw - self.mean) / safe


def assemble_features(net: RoadNetwork, slices=None) -> FeatureTable:
    if slices is None:
        slices = tuple(range(24))
    raw = np.column_stack([
        total_depth(net),
        integration(net),
        connectivity(net),
        choice(net),
        net.lengths(),
    ])
    return FeatureTable(
        raw=raw,
        road_type_tags=[s.road_type for s in net.segments],
        direction=np.array([s.direction for s in net.segments], dtype=np.int64),
        slices=tuple(int(t) for t in slices),
        mean=raw.mean(axis=0),
        std=raw.std(axis=0),
    )


def save_features(table: FeatureTable, path) -> None:
    lines = ["segment_id,time_slice,total_depth,integration,connectivity,choice,length,road_type,direction"]
    for seg in range(table.n):
        td, integ, conn, ch, le = (float(x) for x in table.raw[seg])
        for sl in table.slices:
            lines.append(f"{seg},{sl},{td!r},{integ!r},{conn!r},{ch!r},{le!r},"
                         f"{table.road_type_tags[seg]},{int(table.direction[seg])}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_features(path) -> FeatureTable:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    header = "segment_id,time_slice,total_depth,integration,connectivity,choice,length,road_type,direction"
    if not lines or lines[0].strip() != header:
        raise DataError(f"{path}: bad or missing feature header")
    rows: dict[int, tuple] = {}
    slices: set[int] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 9:
            raise DataError(f"{path}:{lineno}: expected 9 fields")
        seg = int(parts[0])
        slices.add(int(parts[1]))
        vals = (float(parts[2]), float(parts[3]), float(parts[4]), float(parts[5]),
                float(parts[6]), parts[7], int(parts[8]))
        if seg in rows and rows[seg] != vals:
            raise DataError(f"{path}:{lineno}: segment {seg} has inconsistent rows across slices")
        rows[seg] = vals
    ids = sorted(rows)
    if ids != list(range(len(ids))):
        raise DataError(f"{path}: segment ids not dense 0..{len(ids) - 1}")
    raw = np.array([[rows[i][k] for k in range(5)] for i in ids])
    return FeatureTable(
        raw=raw,
        road_type_tags=[rows[i][5] for i in ids],
        direction=np.array([rows[i][6] for i in ids], dtype=np.int64),
        slices=tuple(sorted(slices)),
        mean=raw.mean(axis=0),
        std=raw.std(axis=0),
    )
