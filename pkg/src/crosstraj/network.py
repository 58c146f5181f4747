"""Road networks, trajectories, cost labels, demands: types and file formats.

The network is a segment-level dual graph: segments are the nodes, and an
adjacency pair (i, j) means the two segments share an intersection. All
coordinates are planar meters; times are seconds.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def derive_seed(root: int, *parts) -> int:
    """Split one root seed into independent, reproducible per-purpose seeds."""
    tag = repr((int(root),) + tuple(str(p) for p in parts))
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


def direction_bucket(direction_deg: float) -> int:
    """Discretize a bearing into 8 compass buckets of 45 degrees.

    Bucket k covers [45k - 22.5, 45k + 22.5) degrees, so bucket 0 is
    centered on 0 deg.
    """
    return int(((direction_deg % 360.0) + 22.5) // 45.0) % 8


@dataclass(frozen=True)
class Segment:
    id: int
    length_m: float
    road_type: str
    direction_deg: float
    midpoint: tuple[float, float]
    geometry: tuple[tuple[float, float], ...] | None = None

    @property
    def direction(self) -> int:
        return direction_bucket(self.direction_deg)


@dataclass
class RoadNetwork:
    name: str
    segments: list[Segment]
    adjacency: list[tuple[int, int]]
    _neighbors: list[list[int]] | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.segments)

    @property
    def neighbors(self) -> list[list[int]]:
        """Sorted neighbor lists per segment id."""
        if self._neighbors is None:
            nbrs: list[list[int]] = [[] for _ in range(self.n)]
            for i, j in self.adjacency:
                nbrs[i].append(j)
                nbrs[j].append(i)
            self._neighbors = [sorted(lst) for lst in nbrs]
        return self._neighbors

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def midpoints(self):
        import numpy as np
        return np.array([s.midpoint for s in self.segments], dtype=np.float64)

    def lengths(self):
        import numpy as np
        return np.array([s.length_m for s in self.segments], dtype=np.float64)

    def validate(self) -> None:
        ids = [s.id for s in self.segments]
        if ids != list(range(len(ids))):
            raise DataError(f"segment ids must be dense 0..{len(ids) - 1}, got {ids[:5]}...")
        for s in self.segments:
            if not (s.length_m > 0):
                raise DataError(f"segment {s.id}: length_m must be > 0, got {s.length_m}")
            if not all(math.isfinite(c) for c in s.midpoint):
                raise DataError(f"segment {s.id}: non-finite midpoint {s.midpoint}")
            if not math.isfinite(s.direction_deg):
                raise DataError(f"segment {s.id}: non-finite direction_deg")
        seen: set[tuple[int, int]] = set()
        for i, j in self.adjacency:
            if i == j:
                raise DataError(f"self-loop adjacency at segment {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise DataError(f"adjacency ({i},{j}) references unknown segment")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise DataError(f"duplicate adjacency pair ({key[0]},{key[1]})")
            seen.add(key)


@dataclass
class Trajectory:
    traj_id: int
    time_slice: int
    segments: list[int]
    times: list[float] | None = None


@dataclass(frozen=True)
class Demand:
    od_id: int
    origin: int
    destination: int
    time_slice: int


@dataclass
class CostLabels:
    """Per (segment_id, time_slice): observed mean travel time, speed, sample count."""

    table: dict[tuple[int, int], tuple[float, float, int]]

    def get(self, segment_id: int, time_slice: int):
        return self.table.get((segment_id, time_slice))

    def arrays(self, n_segments: int, n_slices: int = 24):
        """Dense (times, speeds, mask) arrays; mask marks cells with labels."""
        import numpy as np
        times = np.zeros((n_segments, n_slices))
        speeds = np.zeros((n_segments, n_slices))
        mask = np.zeros((n_segments, n_slices), dtype=bool)
        for (seg, sl), (t, v, _c) in self.table.items():
            times[seg, sl] = t
            speeds[seg, sl] = v
            mask[seg, sl] = True
        return times, speeds, mask


# ---------------------------------------------------------------------------
# network files


def _segment_from_record(rec: dict) -> Segment:
    try:
        geometry = rec.get("geometry")
        return Segment(
            id=int(rec["id"]),
            length_m=float(rec["length_m"]),
            road_type=str(rec["road_type"]),
            direction_deg=float(rec["direction_deg"]),
            midpoint=(float(rec["midpoint"][0]), float(rec["midpoint"][1])),
            geometry=tuple((float(x), float(y)) for x, y in geometry) if geometry else None,
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise DataError(f"segment record {rec.get('id', '?')}: missing or malformed field ({exc})") from exc


def load_network(path) -> RoadNetwork:
    """Load and validate a network JSON file; re-index ids densely if needed."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from exc
    for key in ("name", "segments", "adjacency"):
        if key not in doc:
            raise DataError(f"{path}: missing top-level key '{key}'")
    segments = [_segment_from_record(rec) for rec in doc["segments"]]
    ids = [s.id for s in segments]
    if len(set(ids)) != len(ids):
        dup = sorted(i for i in set(ids) if ids.count(i) > 1)[0]
        raise DataError(f"duplicate segment id {dup}")
    remap = None
    if ids != list(range(len(ids))):
        order = sorted(range(len(segments)), key=lambda k: segments[k].id)
        remap = {segments[k].id: new for new, k in enumerate(order)}
        segments = [
            Segment(id=new, length_m=segments[k].length_m, road_type=segments[k].road_type,
                    direction_deg=segments[k].direction_deg, midpoint=segments[k].midpoint,
                    geometry=segments[k].geometry)
            for new, k in enumerate(order)
        ]
    adjacency = []
    for pair in doc["adjacency"]:
        if len(pair) != 2:
            raise DataError(f"adjacency entry {pair} is not a pair")
        i, j = int(pair[0]), int(pair[1])
        if remap is not None:
            if i not in remap or j not in remap:
                raise DataError(f"adjacency ({i},{j}) references unknown segment")
            i, j = remap[i], remap[j]
        adjacency.append((i, j))
    net = RoadNetwork(name=str(doc["name"]), segments=segments, adjacency=adjacency)
    net.validate()
    return net


def save_network(net: RoadNetwork, path) -> None:
    """Write canonical JSON: sorted keys, stable float text; load(save(x)) == x."""
    doc = {
        "name": net.name,
        "segments": [
            {
                "id": s.id,
                "length_m": s.length_m,
                "road_type": s.road_type,
                "direction_deg": s.direction_deg,
                "midpoint": [s.midpoint[0], s.midpoint[1]],
                **({"geometry": [[x, y] for x, y in s.geometry]} if s.geometry else {}),
            }
            for s in net.segments
        ],
        "adjacency": [[i, j] for i, j in net.adjacency],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


# ---------------------------------------------------------------------------
# trajectory files: `traj_id, time_slice, seg;seg;...[, t;t;...]`


def load_trajectories(path) -> list[Trajectory]:
    out: list[Trajectory] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (3, 4):
            raise DataError(f"{path}:{lineno}: expected 3 or 4 comma-separated fields, got {len(parts)}")
        try:
            traj_id = int(parts[0])
            time_slice = int(parts[1])
            segments = [int(tok) for tok in parts[2].split(";") if tok != ""]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
        if not (0 <= time_slice <= 23):
            raise DataError(f"{path}:{lineno}: time_slice {time_slice} outside 0..23")
        if not segments:
            raise DataError(f"{path}:{lineno}: empty segment list")
        times = None
        if len(parts) == 4:
            try:
                times = [float(tok) for tok in parts[3].split(";") if tok != ""]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if len(times) != len(segments):
                raise DataError(f"{path}:{lineno}: {len(times)} times for {len(segments)} segments")
        out.append(Trajectory(traj_id, time_slice, segments, times))
    return out


def save_trajectories(trajs: list[Trajectory], path) -> None:
    lines = []
    for t in trajs:
        fields = [str(t.traj_id), str(t.time_slice), ";".join(str(s) for s in t.segments)]
        if t.times is not None:
            fields.append(";".join(repr(x) for x in t.times))
        lines.append(", ".join(fields))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def check_consecutive(net: RoadNetwork, traj: Trajectory) -> bool:
    """True when every consecutive segment pair is adjacent in the network."""
    nbrs = net.neighbors
    return all(b in nbrs[a] for a, b in zip(traj.segments, traj.segments[1:]))


def preprocess_trajectories(raw: list[Trajectory]) -> list[Trajectory]:
    """Drop trajectories shorter than 3 segments or containing a repeated segment."""
    return [t for t in raw
            if len(t.segments) >= 3 and len(set(t.segments)) == len(t.segments)]


# ---------------------------------------------------------------------------
# cost labels


def compute_cost_labels(trajs: list[Trajectory], net: RoadNetwork) -> CostLabels:
    """Aggregate per-segment traversal-time samples into (time, speed) labels.

    Per (segment, slice) cell: one pass collects samples, samples farther
    than 3 standard deviations (of the raw cell, ddof=0) from the raw mean
    are dropped, and the label is the mean of the survivors. Speed is
    segment length over mean time. Cells with no samples are absent.
    """
    import numpy as np

    cells: dict[tuple[int, int], list[float]] = {}
    for t in trajs:
        if t.times is None:
            continue
        for seg, sample in zip(t.segments, t.times):
            cells.setdefault((seg, t.time_slice), []).append(sample)
    table: dict[tuple[int, int], tuple[float, float, int]] = {}
    for (seg, sl), samples in cells.items():
        arr = np.array(samples, dtype=np.float64)
        mean = arr.mean()
        std = arr.std()
        keep = arr[np.abs(arr - mean) <= 3.0 * std] if std > 0 else arr
        mean_time = float(keep.mean())
        if mean_time <= 0:
            raise DataError(f"segment {seg} slice {sl}: nonpositive mean travel time")
        table[(seg, sl)] = (mean_time, net.segments[seg].length_m / mean_time, int(keep.size))
    return CostLabels(table)


def load_cost_labels(path) -> CostLabels:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "segment_id,time_slice,travel_time_s,speed_mps,sample_count":
        raise DataError(f"{path}: bad or missing cost-label header")
    table = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 fields")
        seg, sl = int(parts[0]), int(parts[1])
        table[(seg, sl)] = (float(parts[2]), float(parts[3]), int(parts[4]))
    return CostLabels(table)


def save_cost_labels(labels: CostLabels, path) -> None:
    lines = ["segment_id,time_slice,travel_time_s,speed_mps,sample_count"]
    for (seg, sl) in sorted(labels.table):
        t, v, c = labels.table[(seg, sl)]
        lines.append(f"{seg},{sl},{t!r},{v!r},{c}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# OD demands


def load_demands(path) -> list[Demand]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "od_id,origin,destination,time_slice":
        raise DataError(f"{path}: bad or missing demand header")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 fields")
        d = Demand(int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]))
        if d.origin == d.destination:
            raise DataError(f"{path}:{lineno}: demand {d.od_id} has origin == destination")
        if not (0 <= d.time_slice <= 23):
            raise DataError(f"{path}:{lineno}: time_slice {d.time_slice} outside 0..23")
        out.append(d)
    return out


def save_demands(demands: list[Demand], path) -> None:
    lines = ["od_id,origin,destination,time_slice"]
    for d in sorted(demands, key=lambda d: d.od_id):
        lines.append(f"{d.od_id},{d.origin},{d.destination},{d.time_slice}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
