"""Travel-preference learning and trajectory generation.

Each segment gets a positive preference weight: a learned positive
combination of the predicted observable costs plus a hidden cost term
from the frozen cost latent. Routes minimize the summed preference, so
training compares each real trajectory against the currently optimal
path for its OD pair and pushes preferences until real paths look
optimal. The searched path is held fixed during differentiation; only
its preference values carry gradient.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .costmodel import CostModel, build_city_graph, infer_city
from .encoder import CityGraph
from .network import Demand, RoadNetwork, Trajectory, derive_seed
from .routing import dijkstra_node_weighted

COST_TYPES = 2  # predicted travel time and speed


@dataclass(frozen=True)
class PreferenceConfig:
    lr: float = 0.01
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class PreferenceModel:
    """Unconstrained cost-type weights plus the hidden-cost perceptron."""

    params: dict[str, ad.Tensor]
    latent_dim: int


def init_preference_params(rng: np.random.Generator, latent_dim: int) -> dict[str, ad.Tensor]:
    params = {"pref.weights": ad.Tensor(rng.normal(scale=0.1, size=COST_TYPES),
                                        requires_grad=True)}
    params.update(ad.linear_params(rng, "hidden.l1", latent_dim, latent_dim))
    params.update(ad.linear_params(rng, "hidden.l2", latent_dim, 1))
    return params


def hidden_cost(params: dict[str, ad.Tensor], z: ad.Tensor | np.ndarray) -> ad.Tensor:
    """Positive per-segment cost for what the observable costs miss."""
    out = ad.linear(params, "hidden.l2", ad.relu(ad.linear(params, "hidden.l1", z)))
    n = out.data.shape[0]
    return ad.reshape(ad.softplus(out), (n,))


def preference_values(params: dict[str, ad.Tensor], y_hat: np.ndarray,
                      z: np.ndarray) -> ad.Tensor:
    """Strictly positive preference per segment at one time slice.

    y_hat is the cost model's positive (n, 2) prediction, z its (n, latent)
    cost latents; both are frozen inputs here.
    """
    w = ad.softplus(params["pref.weights"])
    observable = ad.reshape(ad.matmul(ad.Tensor(y_hat), ad.reshape(w, (COST_TYPES, 1))),
                            (y_hat.shape[0],))
    return ad.add(observable, hidden_cost(params, ad.Tensor(z)))


def shortest_path(net: RoadNetwork, weights: np.ndarray, origin: int, dest: int) -> list[int]:
    """Minimum-total-preference segment path, endpoints included."""
    result = dijkstra_node_weighted(net.neighbors, weights, origin, dest)
    if result is None:
        raise ValueError(f"destination {dest} unreachable from {origin}")
    return result[0]


def preference_loss_from_p(p_by_slice: dict[int, ad.Tensor], net: RoadNetwork,
                           trajectories: list[Trajectory]) -> tuple[ad.Tensor, int]:
    """Mean over trajectories of p(real path) - p(optimal path).

    The optimal path is searched with the current preferences and treated
    as a constant index sequence; each contribution is >= 0 by optimality.
    Returns (loss, number of skipped trajectories).
    """
    per_slice_sums = []
    used = 0
    skipped = 0
    for ts in sorted(p_by_slice):
        batch = [t for t in trajectories if t.time_slice == ts]
        if not batch:
            continue
        p = p_by_slice[ts]
        weights = p.data
        real_idx: list[int] = []
        real_grp: list[int] = []
        best_idx: list[int] = []
        best_grp: list[int] = []
        gid = 0
        for t in batch:
            found = dijkstra_node_weighted(net.neighbors, weights,
                                           t.segments[0], t.segments[-1])
            if found is None:
                skipped += 1
                continue
            real_idx.extend(t.segments)
            real_grp.extend([gid] * len(t.segments))
            best_idx.extend(found[0])
            best_grp.extend([gid] * len(found[0]))
            gid += 1
        if gid == 0:
            continue
        real_sums = ad.group_sum(ad.rows(p, real_idx), real_grp, gid)
        best_sums = ad.group_sum(ad.rows(p, best_idx), best_grp, gid)
        per_slice_sums.append(ad.tsum(ad.sub(real_sums, best_sums)))
        used += gid
    if skipped:
        warnings.warn(f"{skipped} trajectories skipped: destination unreachable")
    if used == 0:
        warnings.warn("no usable trajectories in batch; preference loss is 0")
        return ad.Tensor(0.0), skipped
    total = per_slice_sums[0]
    for term in per_slice_sums[1:]:
        total = ad.add(total, term)
    return ad.mul(total, 1.0 / used), skipped


def preference_loss(params: dict[str, ad.Tensor], net: RoadNetwork,
                    trajectories: list[Trajectory],
                    costs_by_slice: dict[int, tuple[np.ndarray, np.ndarray]],
                    ) -> tuple[ad.Tensor, int]:
    p_by_slice = {ts: preference_values(params, y, z)
                  for ts, (y, z) in costs_by_slice.items()}
    return preference_loss_from_p(p_by_slice, net, trajectories)


def costs_for_slices(model: CostModel, graph: CityGraph,
                     slices) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Frozen (y_hat, z_cost) arrays per requested time slice."""
    return {int(ts): infer_city(model, graph, int(ts)) for ts in sorted(set(slices))}


def train_preference(net: RoadNetwork, trajectories: list[Trajectory],
                     costs_by_slice: dict[int, tuple[np.ndarray, np.ndarray]],
                     config: PreferenceConfig,
                     init_params: dict[str, ad.Tensor] | None = None,
                     ) -> tuple[PreferenceModel, list[float]]:
    """Full-batch preference training; the cost inputs stay frozen."""
    if not trajectories:
        raise ValueError("no trajectories to train on")
    missing = {t.time_slice for t in trajectories} - set(costs_by_slice)
    if missing:
        raise ValueError(f"no cost predictions for time slices {sorted(missing)}")
    latent_dim = next(iter(costs_by_slice.values()))[1].shape[1]
    if init_params is None:
        rng = np.random.default_rng(derive_seed(config.seed, "pref-init"))
        params = init_preference_params(rng, latent_dim)
    else:
        params = {k: ad.Tensor(v.data.copy(), requires_grad=True)
                  for k, v in init_params.items()}
    opt = ad.Adam(params, lr=config.lr)
    history: list[float] = []
    for _ in range(config.epochs):
        loss, _ = preference_loss(params, net, trajectories, costs_by_slice)
        if loss.requires_grad:
            loss.backward()
            opt.step()
        opt.zero_grad()
        history.append(float(loss.data))
    return PreferenceModel(params, latent_dim), history


# ---------------------------------------------------------------------------
# generation


def generate_paths(net: RoadNetwork, demands: list[Demand],
                   p_by_slice: dict[int, np.ndarray],
                   ) -> tuple[list[Trajectory], list[tuple[int, str]]]:
    """Preference-shortest trajectory per feasible demand.

    Pure function of its inputs; infeasible demands come back as
    (od_id, status) rows instead of trajectories.
    """
    out: list[Trajectory] = []
    infeasible: list[tuple[int, str]] = []
    for dem in demands:
        weights = p_by_slice.get(dem.time_slice)
        if weights is None:
            raise ValueError(f"no preferences for time slice {dem.time_slice}")
        found = dijkstra_node_weighted(net.neighbors, weights, dem.origin, dem.destination)
        if found is None:
            infeasible.append((dem.od_id, "unreachable"))
            continue
        out.append(Trajectory(traj_id=dem.od_id, time_slice=dem.time_slice,
                              segments=found[0]))
    return out, infeasible


def generate(cost_model: CostModel, pref: PreferenceModel, net: RoadNetwork,
             features, demands: list[Demand],
             ) -> tuple[list[Trajectory], list[tuple[int, str]]]:
    graph = build_city_graph(net, features, cost_model.config)
    costs = costs_for_slices(cost_model, graph, (d.time_slice for d in demands))
    p_by_slice = {ts: preference_values(pref.params, y, z).data
                  for ts, (y, z) in costs.items()}
    return generate_paths(net, demands, p_by_slice)


def save_infeasible(path, rows: list[tuple[int, str]]) -> None:
    lines = ["od_id,status"] + [f"{od},{status}" for od, status in rows]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def save_preference_history(path, history: list[float]) -> None:
    lines = ["epoch,l_pref"] + [f"{i},{float(v)!r}" for i, v in enumerate(history)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def save_preference_model(path, model: PreferenceModel, config: PreferenceConfig) -> None:
    meta = {"kind": "preference-model", "latent_dim": model.latent_dim,
            "lr": config.lr, "epochs": config.epochs, "seed": config.seed}
    ad.save_checkpoint(path, model.params, meta)


def load_preference_model(path) -> tuple[PreferenceModel, PreferenceConfig]:
    params, meta = ad.load_checkpoint(path)
    if meta.get("kind") != "preference-model":
        raise ValueError(f"{path} is not a preference-model checkpoint")
    config = PreferenceConfig(lr=meta["lr"], epochs=meta["epochs"], seed=meta["seed"])
    return PreferenceModel(params, meta["latent_dim"]), config
