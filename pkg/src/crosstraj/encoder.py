"""Spatially-aware graph attention encoder over subgraph batches.

Raw per-segment features (5 z-scored continuous measures plus embedded
road type, direction bucket, and time slice) are linearly mapped to a
hidden vector, then refined by stacked attention layers. For a directed
edge (neighbor j -> target i) the score is

    e_ij = a . leaky_relu(Ws h_i + Wt h_j + We s_ij)

softmaxed over each target's neighborhood; the layer output is
relu(sum_j alpha_ij h_j) + h_i, so a segment with no neighbors in the
subgraph passes through the residual unchanged. Parameters live in a flat
dict whose keys double as the checkpoint names (sagat.layer{l}.{a,Ws,Wt,We}).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import space_syntax
from .network import RoadNetwork
from .space_syntax import FeatureTable

N_CONTINUOUS = 5
N_DIRECTIONS = 8
N_TIME_SLICES = 24
N_RELATION = 3


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 6
    hidden_dim: int = 64
    type_embed_dim: int = 8
    dir_embed_dim: int = 8
    time_embed_dim: int = 8
    leaky_slope: float = 0.2
    road_type_vocab: tuple[str, ...] = ()

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        for dim in (self.hidden_dim, self.type_embed_dim, self.dir_embed_dim, self.time_embed_dim):
            if dim <= 0:
                raise ValueError("all dims must be positive")

    @property
    def input_dim(self) -> int:
        return N_CONTINUOUS + self.type_embed_dim + self.dir_embed_dim + self.time_embed_dim

    @property
    def type_vocab_size(self) -> int:
        return len(self.road_type_vocab) + 1  # slot 0 is reserved for unseen tags


def road_type_vocab(*networks: RoadNetwork) -> tuple[str, ...]:
    tags: set[str] = set()
    for net in networks:
        tags.update(s.road_type for s in net.segments)
    return tuple(sorted(tags))


def type_indices(config: EncoderConfig, tags: list[str]) -> np.ndarray:
    """Vocabulary indices; tags outside the vocabulary map to the reserved 0."""
    lookup = {t: i + 1 for i, t in enumerate(config.road_type_vocab)}
    return np.array([lookup.get(t, 0) for t in tags], dtype=np.int64)


def init_encoder_params(rng: np.random.Generator, config: EncoderConfig) -> dict[str, ad.Tensor]:
    params: dict[str, ad.Tensor] = {}

    def emb(name, rows_n, dim):
        params[name] = ad.Tensor(ad.glorot_uniform(rng, rows_n, dim), requires_grad=True)

    emb("sagat.embed.road_type", config.type_vocab_size, config.type_embed_dim)
    emb("sagat.embed.direction", N_DIRECTIONS, config.dir_embed_dim)
    emb("sagat.embed.time", N_TIME_SLICES, config.time_embed_dim)
    params.update(ad.linear_params(rng, "sagat.input", config.input_dim, config.hidden_dim))
    h = config.hidden_dim
    for layer in range(config.layers):
        p = f"sagat.layer{layer}"
        params[f"{p}.Ws"] = ad.Tensor(ad.glorot_uniform(rng, h, h), requires_grad=True)
        params[f"{p}.Wt"] = ad.Tensor(ad.glorot_uniform(rng, h, h), requires_grad=True)
        params[f"{p}.We"] = ad.Tensor(ad.glorot_uniform(rng, N_RELATION, h), requires_grad=True)
        params[f"{p}.a"] = ad.Tensor(ad.glorot_uniform(rng, h, 1), requires_grad=True)
    return params


@dataclass
class EncoderInputs:
    """One subgraph at one time slice, in local node indices."""

    cont: np.ndarray        # (n, 5) z-scored continuous features
    type_idx: np.ndarray    # (n,)
    dir_idx: np.ndarray     # (n,)
    time_idx: np.ndarray    # (n,) all equal to the slice
    edge_src: np.ndarray    # (E,) local index of the neighbor j
    edge_dst: np.ndarray    # (E,) local index of the target i
    edge_rel: np.ndarray    # (E, 3) z-scored (bet, angle, dist)
    segments: list[int] = field(default_factory=list)  # global ids per local row

    @property
    def n(self) -> int:
        return self.cont.shape[0]


def embed_inputs(params: dict[str, ad.Tensor], config: EncoderConfig,
                 inputs: EncoderInputs) -> ad.Tensor:
    if inputs.type_idx.size and (inputs.type_idx.max() >= config.type_vocab_size
                                 or inputs.type_idx.min() < 0):
        raise IndexError("road_type index out of range")
    if inputs.dir_idx.size and (inputs.dir_idx.max() >= N_DIRECTIONS or inputs.dir_idx.min() < 0):
        raise IndexError("direction index out of range")
    if inputs.time_idx.size and (inputs.time_idx.max() >= N_TIME_SLICES or inputs.time_idx.min() < 0):
        raise IndexError("time index out of range")
    x = ad.concat([
        ad.Tensor(inputs.cont),
        ad.rows(params["sagat.embed.road_type"], inputs.type_idx),
        ad.rows(params["sagat.embed.direction"], inputs.dir_idx),
        ad.rows(params["sagat.embed.time"], inputs.time_idx),
    ], axis=1)
    return ad.linear(params, "sagat.input", x)


def attention_weights(params: dict[str, ad.Tensor], layer: int, h: ad.Tensor,
                      inputs: EncoderInputs, slope: float) -> ad.Tensor:
    """Per-edge attention, softmaxed within each target's neighborhood."""
    p = f"sagat.layer{layer}"
    pre = ad.add(ad.add(ad.matmul(ad.rows(h, inputs.edge_dst), params[f"{p}.Ws"]),
                        ad.matmul(ad.rows(h, inputs.edge_src), params[f"{p}.Wt"])),
                 ad.matmul(ad.Tensor(inputs.edge_rel), params[f"{p}.We"]))
    scores = ad.reshape(ad.matmul(ad.leaky_relu(pre, slope), params[f"{p}.a"]),
                        (len(inputs.edge_src),))
    return ad.neighborhood_softmax(scores, inputs.edge_dst, inputs.n)


def sagat_layer(params: dict[str, ad.Tensor], layer: int, h: ad.Tensor,
                inputs: EncoderInputs, slope: float) -> ad.Tensor:
    alpha = attention_weights(params, layer, h, inputs, slope)
    msg = ad.mul(ad.reshape(alpha, (len(inputs.edge_src), 1)), ad.rows(h, inputs.edge_src))
    agg = ad.group_sum(msg, inputs.edge_dst, inputs.n)
    return ad.add(ad.relu(agg), h)


def encode(params: dict[str, ad.Tensor], config: EncoderConfig,
           inputs: EncoderInputs) -> ad.Tensor:
    h = embed_inputs(params, config, inputs)
    for layer in range(config.layers):
        h = sagat_layer(params, layer, h, inputs, config.leaky_slope)
    return h


# ---------------------------------------------------------------------------
# per-city precomputation


@dataclass
class CityGraph:
    """Everything encoder batches need for one city, precomputed once."""

    name: str
    cont: np.ndarray       # (N, 5) z-scored continuous features
    type_idx: np.ndarray   # (N,)
    dir_idx: np.ndarray    # (N,)
    edge_src: np.ndarray   # (2E,) directed: both orientations of each pair
    edge_dst: np.ndarray   # (2E,)
    rel: np.ndarray        # (2E, 3) z-scored with this city's stats
    rel_mean: np.ndarray
    rel_std: np.ndarray

    @property
    def n(self) -> int:
        return self.cont.shape[0]

    def subgraph_inputs(self, segments: list[int], time_slice: int) -> EncoderInputs:
        """Restrict to a segment set; edges with both endpoints inside survive."""
        local = np.full(self.n, -1, dtype=np.int64)
        for li, g in enumerate(segments):
            local[g] = li
        keep = (local[self.edge_src] >= 0) & (local[self.edge_dst] >= 0)
        idx = np.asarray(segments, dtype=np.int64)
        return EncoderInputs(
            cont=self.cont[idx],
            type_idx=self.type_idx[idx],
            dir_idx=self.dir_idx[idx],
            time_idx=np.full(len(segments), time_slice, dtype=np.int64),
            edge_src=local[self.edge_src[keep]],
            edge_dst=local[self.edge_dst[keep]],
            edge_rel=self.rel[keep],
            segments=list(segments),
        )


def prepare_city(net: RoadNetwork, table: FeatureTable, config: EncoderConfig,
                 sampled_paths: list[list[int]]) -> CityGraph:
    pairs = list(net.adjacency)
    rel_raw_pairs = space_syntax.relation_matrix(net, pairs, sampled_paths)
    # both orientations share the symmetric relation row
    edge_src = np.array([j for _i, j in pairs] + [i for i, _j in pairs], dtype=np.int64)
    edge_dst = np.array([i for i, _j in pairs] + [j for _i, j in pairs], dtype=np.int64)
    rel_raw = np.vstack([rel_raw_pairs, rel_raw_pairs]) if pairs else np.zeros((0, N_RELATION))
    mean = rel_raw.mean(axis=0) if len(rel_raw) else np.zeros(N_RELATION)
    std = rel_raw.std(axis=0) if len(rel_raw) else np.zeros(N_RELATION)
    safe = np.where(std > 0, std, 1.0)
    return CityGraph(
        name=net.name,
        cont=table.normalized,
        type_idx=type_indices(config, table.road_type_tags),
        dir_idx=table.direction.copy(),
        edge_src=edge_src,
        edge_dst=edge_dst,
        rel=(rel_raw - mean) / safe,
        rel_mean=mean,
        rel_std=std,
    )
