"""Synthetic grid city with a planted, topology-driven travel-cost rule.

The street layout is a rows x cols grid of intersections (200 m spacing,
optionally jittered); every grid edge becomes one segment of the dual
graph. The planted travel time of a segment depends only on its length and
its true topological measures, scaled by a two-peak daily congestion
profile, so the cost rule transfers across cities by construction:

    time(i, t) = (length_i / v0) * (1 + 1.5*ch_i + 0.5*co_i) * congestion(t)

with ch/co the max-normalized choice and connectivity. Trajectories are
least-cost paths between uniform OD pairs under per-trip multiplicative
noise, and each carries noisy per-segment time observations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import space_syntax
from .network import (CostLabels, Demand, RoadNetwork, Segment, Trajectory,
                      compute_cost_labels)
from .routing import dijkstra_node_weighted

SPACING_M = 200.0
FREE_FLOW_MPS = 12.0


def congestion_factor(time_slice: int) -> float:
    """Daily profile with morning and evening peaks (max ~1.6 at 8h and 18h)."""
    t = float(time_slice)
    return 1.0 + 0.6 * math.exp(-((t - 8.0) ** 2) / 8.0) + 0.6 * math.exp(-((t - 18.0) ** 2) / 8.0)


def planted_cost_table(net: RoadNetwork, v0: float = FREE_FLOW_MPS) -> np.ndarray:
    """(N, 24) ground-truth travel times in seconds."""
    ch = space_syntax.choice(net)
    co = space_syntax.connectivity(net)
    ch_n = ch / ch.max() if ch.max() > 0 else ch
    co_n = co / co.max() if co.max() > 0 else co
    base = (net.lengths() / v0) * (1.0 + 1.5 * ch_n + 0.5 * co_n)
    prof = np.array([congestion_factor(t) for t in range(24)])
    return base[:, None] * prof[None, :]


@dataclass
class SynthCity:
    net: RoadNetwork
    labels: CostLabels
    trajectories: list[Trajectory]   # training split, with per-segment times
    holdout: list[Trajectory]        # held out for evaluation; traj_id == od_id
    demands: list[Demand]            # OD + slice of each holdout trajectory


def synth_city(seed: int, rows: int, cols: int, jitter: float, *,
               n_trips: int = 2000, holdout_frac: float = 0.1,
               name: str | None = None) -> SynthCity:
    """Generate a city; identical arguments give bit-identical output."""
    if rows < 3 or cols < 3:
        raise ValueError(f"rows and cols must be >= 3, got {rows}x{cols}")
    if not (0.0 <= jitter < 0.5):
        raise ValueError(f"jitter must be in [0, 0.5), got {jitter}")
    if name is None:
        name = f"synth-{seed}-{rows}x{cols}"
    rng = np.random.default_rng(seed)

    offsets = rng.uniform(-jitter, jitter, size=(rows, cols, 2)) * SPACING_M
    nodes = np.zeros((rows, cols, 2))
    for r in range(rows):
        for c in range(cols):
            nodes[r, c] = (c * SPACING_M + offsets[r, c, 0],
                           r * SPACING_M + offsets[r, c, 1])

    def road_type(axis_index: int, n_axis: int) -> str:
        if axis_index == 0 or axis_index == n_axis - 1:
            return "local"
        if axis_index == n_axis // 2:
            return "arterial"
        return "collector"

    segments: list[Segment] = []
    endpoints: list[tuple[tuple[int, int], tuple[int, int]]] = []
    for r in range(rows):                      # horizontal edges, row-major
        for c in range(cols - 1):
            endpoints.append(((r, c), (r, c + 1)))
    for r in range(rows - 1):                  # then vertical edges
        for c in range(cols):
            endpoints.append(((r, c), (r + 1, c)))
    for sid, (a, b) in enumerate(endpoints):
        p1, p2 = nodes[a], nodes[b]
        d = p2 - p1
        horizontal = a[0] == b[0]
        segments.append(Segment(
            id=sid,
            length_m=float(np.hypot(*d)),
            road_type=road_type(a[0] if horizontal else a[1], rows if horizontal else cols),
            direction_deg=float(math.degrees(math.atan2(d[1], d[0])) % 360.0),
            midpoint=(float((p1[0] + p2[0]) / 2), float((p1[1] + p2[1]) / 2)),
            geometry=((float(p1[0]), float(p1[1])), (float(p2[0]), float(p2[1]))),
        ))

    incident: dict[tuple[int, int], list[int]] = {}
    for sid, (a, b) in enumerate(endpoints):
        incident.setdefault(a, []).append(sid)
        incident.setdefault(b, []).append(sid)
    adjacency: list[tuple[int, int]] = []
    for node in sorted(incident):
        segs = incident[node]
        for x in range(len(segs)):
            for y in range(x + 1, len(segs)):
                adjacency.append((segs[x], segs[y]))
    net = RoadNetwork(name=name, segments=segments, adjacency=adjacency)
    net.validate()

    planted = planted_cost_table(net)
    n = net.n
    trips: list[tuple[int, list[int], list[float]]] = []
    for _ in range(n_trips):
        t = int(rng.integers(0, 24))
        while True:
            o, d = (int(x) for x in rng.integers(0, n, size=2))
            if o == d:
                continue
            trip_noise = rng.lognormal(mean=0.0, sigma=0.25, size=n)
            found = dijkstra_node_weighted(net.neighbors, planted[:, t] * trip_noise, o, d)
            if found is not None and len(found[0]) >= 3:
                path = found[0]
                break
        obs_noise = rng.lognormal(mean=0.0, sigma=0.1, size=len(path))
        times = [float(planted[s, t] * obs_noise[k]) for k, s in enumerate(path)]
        trips.append((t, path, times))

    holdout_n = int(round(n_trips * holdout_frac))
    train_n = n_trips - holdout_n
    trajectories = [Trajectory(i, t, path, times)
                    for i, (t, path, times) in enumerate(trips[:train_n])]
    holdout = [Trajectory(i, t, path, times)
               for i, (t, path, times) in enumerate(trips[train_n:])]
    demands = [Demand(od_id=h.traj_id, origin=h.segments[0],
                      destination=h.segments[-1], time_slice=h.time_slice)
               for h in holdout]
    labels = compute_cost_labels(trajectories, net)
    return SynthCity(net=net, labels=labels, trajectories=trajectories,
                     holdout=holdout, demands=demands)
