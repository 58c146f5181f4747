"""Similarity metrics between real and generated trajectory sets.

Macro metrics compare whole-set distributions (travel distance, radius of
gyration, per-segment visit frequency) with the Jensen-Shannon divergence in
log base 2, so every score lands in [0, 1]. Micro metrics compare each
generated trajectory against the real trajectory with the same od id:
Hausdorff and DTW on segment midpoints, Levenshtein edit distance on segment
ids, and EDR on midpoints with a match radius epsilon.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import RoadNetwork, Trajectory

DEFAULT_BINS = 50
DEFAULT_EDR_EPSILON_M = 100.0

REPORT_KEYS = ("distance_jsd", "radius_jsd", "locfreq_jsd",
               "hausdorff", "dtw", "edt", "edr")


@dataclass(frozen=True, eq=False)
class Histogram:
    """Probability masses over shared bin edges."""

    edges: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        masses = np.asarray(self.masses, dtype=np.float64)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "masses", masses)
        if edges.ndim != 1 or masses.ndim != 1 or edges.size != masses.size + 1:
            raise ValueError("edges must have one more entry than masses")
        if (masses < 0).any():
            raise ValueError("histogram masses must be >= 0")
        if abs(masses.sum() - 1.0) > 1e-9:
            raise ValueError(f"histogram masses must sum to 1, got {masses.sum()!r}")


def equal_width_histograms(real_values, gen_values, bins: int = DEFAULT_BINS):
    """Bin both value sets over their pooled range with shared edges."""
    real_values = np.asarray(real_values, dtype=np.float64)
    gen_values = np.asarray(gen_values, dtype=np.float64)
    if real_values.size == 0 or gen_values.size == 0:
        raise ValueError("empty value set")
    pooled = np.concatenate([real_values, gen_values])
    lo, hi = pooled.min(), pooled.max()
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    real_counts, _ = np.histogram(real_values, bins=edges)
    gen_counts, _ = np.histogram(gen_values, bins=edges)
    return (Histogram(edges, real_counts / real_values.size),
            Histogram(edges, gen_counts / gen_values.size))


def categorical_histogram(masses) -> Histogram:
    """Wrap a distribution over ids 0..n-1 as a unit-width histogram."""
    masses = np.asarray(masses, dtype=np.float64)
    return Histogram(np.arange(masses.size + 1, dtype=np.float64), masses)


def travel_distance(traj: Trajectory, net: RoadNetwork) -> float:
    """Total length in meters of the segments a trajectory traverses."""
    return float(net.lengths()[traj.segments].sum())


def radius_of_gyration(traj: Trajectory, net: RoadNetwork) -> float:
    """Root mean squared distance of visited midpoints to their centroid."""
    pts = net.midpoints()[traj.segments]
    centroid = pts.mean(axis=0)
    return float(np.sqrt(np.mean(((pts - centroid) ** 2).sum(axis=1))))


def loc_freq(trajs: list[Trajectory], net: RoadNetwork) -> np.ndarray:
    """Visit-count distribution over all segments of the network."""
    if not trajs:
        raise ValueError("empty trajectory set")
    counts = np.zeros(net.n, dtype=np.float64)
    for t in trajs:
        counts += np.bincount(t.segments, minlength=net.n)
    return counts / counts.sum()


def jsd(p: Histogram, q: Histogram) -> float:
    """Jensen-Shannon divergence in bits between histograms on shared bins."""
    if p.edges.size != q.edges.size or not np.array_equal(p.edges, q.edges):
        raise ValueError("histograms use different bins")
    a, b = p.masses, q.masses
    m = 0.5 * (a + b)

    def kl(x, ref):
        nz = x > 0
        return float((x[nz] * np.log2(x[nz] / ref[nz])).sum())

    return 0.5 * kl(a, m) + 0.5 * kl(b, m)


def _points(seq) -> np.ndarray:
    pts = np.asarray(seq, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("empty point sequence")
    return pts.reshape(len(pts), -1)


def hausdorff(a, b) -> float:
    """Symmetric Hausdorff distance between two point sets."""
    a, b = _points(a), _points(b)
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def dtw(a, b) -> float:
    """Dynamic time warping cost with Euclidean point distances."""
    a, b = _points(a), _points(b)
    d = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    na, nb = d.shape
    acc = np.full((na + 1, nb + 1), math.inf)
    acc[0, 0] = 0.0
    for i in range(1, na + 1):
        for j in range(1, nb + 1):
            acc[i, j] = d[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1],
                                              acc[i - 1, j - 1])
    return float(acc[na, nb])


def edt(a, b) -> int:
    """Levenshtein distance between two segment-id sequences, unit costs."""
    a, b = list(a), list(b)
    if not a or not b:
        raise ValueError("empty sequence")
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (0 if x == y else 1)))
        prev = cur
    return prev[-1]


def edr(a, b, epsilon: float = DEFAULT_EDR_EPSILON_M) -> float:
    """Edit distance on real sequences, normalized by the longer length.

    Two points match (substitution cost 0) when their Euclidean distance is
    at most epsilon.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    a, b = _points(a), _points(b)
    close = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)) <= epsilon
    na, nb = close.shape
    prev = list(range(nb + 1))
    for i in range(1, na + 1):
        cur = [i]
        for j in range(1, nb + 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (0 if close[i - 1, j - 1] else 1)))
        prev = cur
    return prev[-1] / max(na, nb)


@dataclass
class EvalReport:
    metrics: dict[str, float]
    pair_rows: list[tuple[int, float, float, int, float]]
    histograms: dict[str, tuple[Histogram, Histogram]]
    edr_epsilon: float
    bins: int


def evaluate(real: list[Trajectory], generated: list[Trajectory], net: RoadNetwork,
             epsilon: float = DEFAULT_EDR_EPSILON_M, bins: int = DEFAULT_BINS,
             threads: int = 1) -> EvalReport:
    """Compare a generated trajectory set against the real one.

    Macro scores are JSDs over set-level distributions; micro scores average
    pairwise sequence distances over trajectories sharing an od id. Pairs are
    independent, so `threads` > 1 fans them out; results keep od-id order, so
    the report does not depend on the thread count.
    """
    if not real or not generated:
        raise ValueError("empty trajectory set")
    real_by_id = {t.traj_id: t for t in real}
    shared = sorted(real_by_id.keys() & {t.traj_id for t in generated})
    if not shared:
        raise ValueError("no shared od ids between real and generated sets")

    histograms = {}
    metrics = {}
    for name, value_of in (("distance", travel_distance),
                           ("radius", radius_of_gyration)):
        pair = equal_width_histograms([value_of(t, net) for t in real],
                                      [value_of(t, net) for t in generated], bins)
        histograms[name] = pair
        metrics[f"{name}_jsd"] = jsd(*pair)
    freq_pair = (categorical_histogram(loc_freq(real, net)),
                 categorical_histogram(loc_freq(generated, net)))
    histograms["locfreq"] = freq_pair
    metrics["locfreq_jsd"] = jsd(*freq_pair)

    gen_by_id = {t.traj_id: t for t in generated}
    mids = net.midpoints()

    def one_pair(od_id):
        r, g = real_by_id[od_id], gen_by_id[od_id]
        rp, gp = mids[r.segments], mids[g.segments]
        return (od_id, hausdorff(rp, gp), dtw(rp, gp),
                edt(r.segments, g.segments), edr(rp, gp, epsilon))

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pair_rows = list(pool.map(one_pair, shared))
    else:
        pair_rows = [one_pair(od_id) for od_id in shared]
    cols = np.array([row[1:] for row in pair_rows], dtype=np.float64)
    for k, name in enumerate(("hausdorff", "dtw", "edt", "edr")):
        metrics[name] = float(cols[:, k].mean())
    return EvalReport(metrics, pair_rows, histograms, epsilon, bins)


def save_report(path, report: EvalReport) -> None:
    """Write the metric report as JSON, with the binning for reproducibility."""
    payload = {key: report.metrics[key] for key in REPORT_KEYS}
    payload["edr_epsilon"] = report.edr_epsilon
    payload["bins"] = report.bins
    payload["bin_edges"] = {name: list(pair[0].edges)
                            for name, pair in sorted(report.histograms.items())}
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def save_pair_metrics(path, report: EvalReport) -> None:
    lines = ["od_id,hausdorff,dtw,edt,edr"]
    for od_id, h, d, e, r in report.pair_rows:
        lines.append(f"{od_id},{float(h)!r},{float(d)!r},{int(e)},{float(r)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_histograms(path, report: EvalReport) -> None:
    lines = ["metric,bin_lo,bin_hi,real,generated"]
    for name in sorted(report.histograms):
        real_h, gen_h = report.histograms[name]
        for k in range(real_h.masses.size):
            lines.append(f"{name},{float(real_h.edges[k])!r},{float(real_h.edges[k + 1])!r},"
                         f"{float(real_h.masses[k])!r},{float(gen_h.masses[k])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
