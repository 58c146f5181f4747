"""Transferable travel-cost model with disentangled adversarial training.

Each segment's encoder output is split by two 2-layer perceptrons into a
cost latent (meant to be city-invariant) and a city latent (meant to
identify the city). A shared softplus-headed predictor regresses
(travel time, speed) from the cost latent on labeled segments; a shared
discriminator classifies the city from both latents. Gradient reversal
arranges the adversarial pressure: the cost latent is pushed to fool the
discriminator, and the city latent is pushed to carry no cost signal,
while a squared-cosine penalty decouples the two latents directly.

The softplus head predicts costs in label units (always positive); the
regression losses compare predictions and labels in per-city z-scored
space so one predictor can serve differently scaled cities without the
MSE dwarfing or drowning the rank term. The per-city stats ride along
in the checkpoint.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .encoder import (
    CityGraph,
    EncoderConfig,
    EncoderInputs,
    encode,
    init_encoder_params,
    prepare_city,
    road_type_vocab,
)
from .network import CostLabels, RoadNetwork, derive_seed
from .partition import Partition, sample_batch
from .space_syntax import FeatureTable, sample_canonical_paths

HISTORY_COLUMNS = ("l_mse", "l_rank", "l_dis_s", "l_dis_d", "l_og", "l_total")


@dataclass(frozen=True)
class LossWeights:
    rank: float = 50.0
    domain: float = 100.0
    orthogonal: float = 5.0

    def __post_init__(self):
        if min(self.rank, self.domain, self.orthogonal) < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass(frozen=True)
class CostModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    latent_dim: int = 32
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-5
    epochs: int = 600
    clusters_per_batch: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim <= 0:
            raise ValueError("latent_dim must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.clusters_per_batch < 1:
            raise ValueError("clusters_per_batch must be >= 1")


def init_cost_params(rng: np.random.Generator, config: CostModelConfig) -> dict[str, ad.Tensor]:
    params = init_encoder_params(rng, config.encoder)
    h, z = config.encoder.hidden_dim, config.latent_dim
    for prefix, n_in, n_mid, n_out in (
        ("semantic", h, h, z),
        ("domain", h, h, z),
        ("predictor", z, z, 2),
        ("discriminator", z, z, 1),
    ):
        params.update(ad.linear_params(rng, f"{prefix}.l1", n_in, n_mid))
        params.update(ad.linear_params(rng, f"{prefix}.l2", n_mid, n_out))
    return params


def mlp2(params: dict[str, ad.Tensor], prefix: str, x: ad.Tensor) -> ad.Tensor:
    return ad.linear(params, f"{prefix}.l2", ad.relu(ad.linear(params, f"{prefix}.l1", x)))


def encode_latents(params: dict[str, ad.Tensor], h: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Split hidden vectors into (cost latent, city latent)."""
    return mlp2(params, "semantic", h), mlp2(params, "domain", h)


def predict_cost(params: dict[str, ad.Tensor], z: ad.Tensor) -> ad.Tensor:
    """(n, 2) positive predictions: travel time and speed in label units."""
    return ad.softplus(mlp2(params, "predictor", z))


def discriminator_logits(params: dict[str, ad.Tensor], z: ad.Tensor) -> ad.Tensor:
    n = z.data.shape[0]
    return ad.reshape(mlp2(params, "discriminator", z), (n,))


def discriminate(params: dict[str, ad.Tensor], z: ad.Tensor) -> ad.Tensor:
    """Probability that each latent came from the source city."""
    return ad.sigmoid(discriminator_logits(params, z))


# ---------------------------------------------------------------------------
# losses


def loss_mse(y_hat: ad.Tensor, y: np.ndarray) -> ad.Tensor:
    """Mean over the batch of the squared L2 error of the 2-vector."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] == 0:
        raise ValueError("empty batch")
    return ad.mul(ad.tsum(ad.square(ad.sub(y_hat, ad.Tensor(y)))), 1.0 / y.shape[0])


def sample_rank_pairs(rng: np.random.Generator, n: int,
                      n_pairs: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Uniform ordered pairs of distinct batch indices (default 4n of them)."""
    if n < 2:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if n_pairs is None:
        n_pairs = 4 * n
    i = rng.integers(0, n, n_pairs)
    j = (i + 1 + rng.integers(0, n - 1, n_pairs)) % n
    return i, j


def loss_rank(y_hat: ad.Tensor, y: np.ndarray, pairs_i: np.ndarray,
              pairs_j: np.ndarray) -> ad.Tensor:
    """Pairwise ordering BCE over sampled pairs and both cost types.

    For each pair and cost type with strictly ordered labels the term is
    softplus((1-2q)(y_hat_i - y_hat_j)) with q = [y_i > y_j]; ties carry
    no ordering information and are skipped.
    """
    y = np.asarray(y, dtype=np.float64)
    valid = y[pairs_i] != y[pairs_j]
    n_valid = int(valid.sum())
    if n_valid == 0:
        warnings.warn("rank loss skipped: no strictly ordered label pairs")
        return ad.Tensor(0.0)
    sign = np.where(y[pairs_i] > y[pairs_j], -1.0, 1.0)
    diff = ad.sub(ad.rows(y_hat, pairs_i), ad.rows(y_hat, pairs_j))
    terms = ad.softplus(ad.mul(diff, ad.Tensor(sign)))
    return ad.mul(ad.tsum(ad.mul(terms, ad.Tensor(valid.astype(np.float64)))), 1.0 / n_valid)


def loss_dis(d_hat: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    """Binary cross-entropy of city probabilities against city labels."""
    d = np.asarray(labels, dtype=np.float64)
    if d.size == 0:
        raise ValueError("empty batch")
    if np.all(d == d.flat[0]):
        warnings.warn("discriminator batch is single-domain")
    pos = ad.mul(ad.log(d_hat), ad.Tensor(d))
    neg = ad.mul(ad.log(ad.sub(ad.Tensor(np.ones_like(d)), d_hat)), ad.Tensor(1.0 - d))
    return ad.mul(ad.tsum(ad.add(pos, neg)), -1.0 / d.size)


def loss_orth(z_cost: ad.Tensor, z_city: ad.Tensor) -> ad.Tensor:
    """Mean squared cosine similarity between the two latents, in [0, 1]."""
    if (np.linalg.norm(z_cost.data, axis=-1) == 0).any() or \
            (np.linalg.norm(z_city.data, axis=-1) == 0).any():
        warnings.warn("zero-norm latent: its orthogonality term is treated as 0")
    return ad.tmean(ad.square(ad.cosine_similarity(z_cost, z_city)))


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainBatch:
    """One encoded subgraph with (possibly empty) normalized cost labels.

    mu and inv_sigma carry the per-city label statistics so raw softplus
    predictions can be z-scored alongside the labels; they default to the
    identity transform (mu 0, inv_sigma 1).
    """

    inputs: EncoderInputs
    y: np.ndarray        # (n, 2) normalized labels; zeros where unlabeled
    labeled: np.ndarray  # (n,) bool
    mu: np.ndarray | None = None         # (n, 2)
    inv_sigma: np.ndarray | None = None  # (n, 2)

    def __post_init__(self) -> None:
        n = self.inputs.n
        if self.mu is None:
            self.mu = np.zeros((n, 2))
        if self.inv_sigma is None:
            self.inv_sigma = np.ones((n, 2))

    @classmethod
    def unlabeled(cls, inputs: EncoderInputs) -> "TrainBatch":
        n = inputs.n
        return cls(inputs, np.zeros((n, 2)), np.zeros(n, dtype=bool))


def train_step(params: dict[str, ad.Tensor], config: CostModelConfig, opt: ad.Adam,
               source: TrainBatch, target: TrainBatch,
               rng: np.random.Generator) -> dict[str, float]:
    """One adversarial update on a source batch and a target batch.

    Backward pass minimizes
      L_pred(z_cost) + w_d * [L_dis(grl(z_cost)) + L_dis(z_city)]
        + L_pred(grl(z_city)) + w_g * L_orth
    so the reversal layers realize the min-max signs; the reported total
    uses the signed combination.
    """
    w = config.weights
    h_src = encode(params, config.encoder, source.inputs)
    h_tgt = encode(params, config.encoder, target.inputs)
    zc_src, zd_src = encode_latents(params, h_src)
    zc_tgt, zd_tgt = encode_latents(params, h_tgt)
    z_cost = ad.concat([zc_src, zc_tgt])
    z_city = ad.concat([zd_src, zd_tgt])
    city = np.concatenate([np.ones(source.inputs.n), np.zeros(target.inputs.n)])

    labeled = np.concatenate([source.labeled, target.labeled])
    y_all = np.vstack([source.y, target.y])
    mu = np.vstack([source.mu, target.mu])
    inv = np.vstack([source.inv_sigma, target.inv_sigma])
    lab = np.flatnonzero(labeled)
    zero = ad.Tensor(0.0)
    if lab.size:
        y_lab = y_all[lab]
        mu_lab, inv_lab = ad.Tensor(mu[lab]), ad.Tensor(inv[lab])

        def normalized(y_hat: ad.Tensor) -> ad.Tensor:
            return ad.mul(ad.sub(y_hat, mu_lab), inv_lab)

        pi, pj = sample_rank_pairs(rng, lab.size)
        y_hat = normalized(predict_cost(params, ad.rows(z_cost, lab)))
        l_mse = loss_mse(y_hat, y_lab)
        l_rank = loss_rank(y_hat, y_lab, pi, pj)
        # the predictor also probes the city latent; the reversal pushes
        # that latent away from cost signal while the predictor adapts
        y_hat_city = normalized(
            predict_cost(params, ad.grad_reverse(ad.rows(z_city, lab))))
        l_pred_city = ad.add(loss_mse(y_hat_city, y_lab),
                             ad.mul(loss_rank(y_hat_city, y_lab, pi, pj), w.rank))
    else:
        warnings.warn("batch has no labeled segments; prediction losses are 0")
        l_mse, l_rank, l_pred_city = zero, zero, zero
    l_pred_cost = ad.add(l_mse, ad.mul(l_rank, w.rank))

    # stable logit form of loss_dis; the reversal before the discriminator
    # makes the encoders hide the city in the cost latent
    l_dis_cost = ad.bce_with_logits(discriminator_logits(params, ad.grad_reverse(z_cost)), city)
    l_dis_city = ad.bce_with_logits(discriminator_logits(params, z_city), city)
    l_og = loss_orth(z_cost, z_city)

    total = ad.add(ad.add(l_pred_cost, ad.mul(ad.add(l_dis_cost, l_dis_city), w.domain)),
                   ad.add(l_pred_city, ad.mul(l_og, w.orthogonal)))
    total.backward()
    opt.step()
    opt.zero_grad()

    report = {
        "l_mse": float(l_mse.data),
        "l_rank": float(l_rank.data),
        "l_dis_s": float(l_dis_cost.data),
        "l_dis_d": float(l_dis_city.data),
        "l_og": float(l_og.data),
    }
    report["l_total"] = (float(l_pred_cost.data) - w.domain * report["l_dis_s"]
                         + w.domain * report["l_dis_d"] - float(l_pred_city.data)
                         + w.orthogonal * report["l_og"])
    return report


# ---------------------------------------------------------------------------
# label normalization


@dataclass(frozen=True)
class LabelStats:
    time_mean: float
    time_std: float
    speed_mean: float
    speed_std: float

    def as_dict(self) -> dict:
        return {"time_mean": self.time_mean, "time_std": self.time_std,
                "speed_mean": self.speed_mean, "speed_std": self.speed_std}


def label_stats(times: np.ndarray, speeds: np.ndarray, mask: np.ndarray) -> LabelStats:
    if not mask.any():
        raise ValueError("no labeled cells")

    def ms(a):
        vals = a[mask]
        std = float(vals.std())
        return float(vals.mean()), std if std > 0 else 1.0

    tm, ts = ms(times)
    sm, ss = ms(speeds)
    return LabelStats(tm, ts, sm, ss)


def normalize_labels(times: np.ndarray, speeds: np.ndarray, mask: np.ndarray,
                     stats: LabelStats) -> np.ndarray:
    """(N, slices, 2) z-scored labels; unlabeled cells left at 0."""
    y = np.zeros(times.shape + (2,))
    y[mask, 0] = (times[mask] - stats.time_mean) / stats.time_std
    y[mask, 1] = (speeds[mask] - stats.speed_mean) / stats.speed_std
    return y


def denormalize_predictions(y_norm: np.ndarray, stats: LabelStats) -> np.ndarray:
    out = np.empty_like(y_norm)
    out[..., 0] = y_norm[..., 0] * stats.time_std + stats.time_mean
    out[..., 1] = y_norm[..., 1] * stats.speed_std + stats.speed_mean
    return out


# ---------------------------------------------------------------------------
# full training loop


@dataclass
class CityData:
    """One city's inputs to cost training."""

    net: RoadNetwork
    features: FeatureTable
    part: Partition
    labels: CostLabels | None = None


@dataclass
class CostModel:
    params: dict[str, ad.Tensor]
    config: CostModelConfig
    label_stats: dict[str, LabelStats]
    source_city: str
    target_city: str

    def stats_for(self, city_name: str) -> LabelStats:
        return self.label_stats.get(city_name, self.label_stats[self.source_city])


def build_city_graph(net: RoadNetwork, features: FeatureTable,
                     config: CostModelConfig) -> CityGraph:
    """Encoder-ready city tensors; the relation sample seed is derived from
    the model seed and city name so training and inference agree."""
    paths = sample_canonical_paths(net, seed=derive_seed(config.seed, "canonical-paths", net.name))
    return prepare_city(net, features, config.encoder, paths)


def _batch(graph: CityGraph, part: Partition, k: int, time_slice: int,
           y: np.ndarray, mask: np.ndarray, stats: LabelStats | None,
           rng: np.random.Generator) -> TrainBatch:
    sub = sample_batch(part, k, rng)
    segs = list(sub.segments)
    mu = inv = None
    if stats is not None:
        mu = np.tile([stats.time_mean, stats.speed_mean], (len(segs), 1))
        inv = np.tile([1.0 / stats.time_std, 1.0 / stats.speed_std], (len(segs), 1))
    return TrainBatch(graph.subgraph_inputs(segs, time_slice), y[segs, time_slice],
                      mask[segs, time_slice], mu, inv)


def train_cost_model(source: CityData, target: CityData, config: CostModelConfig, *,
                     use_target_labels: bool = False,
                     init_params: dict[str, ad.Tensor] | None = None,
                     ) -> tuple[CostModel, list[dict]]:
    """Adversarial training of the cost model on a labeled source city and
    an unlabeled target city.

    With use_target_labels=True (fine-tune mode) the target city's own
    labels join the prediction loss; init_params warm-starts from an
    existing checkpoint, in which case config must match it.
    """
    if source.labels is None:
        raise ValueError("source city has no cost labels")
    if use_target_labels and target.labels is None:
        raise ValueError("use_target_labels requires target cost labels")

    if init_params is None:
        vocab = road_type_vocab(source.net, target.net)
        config = replace(config, encoder=replace(config.encoder, road_type_vocab=vocab))
        params = init_cost_params(np.random.default_rng(derive_seed(config.seed, "init")), config)
    else:
        params = {k: ad.Tensor(v.data.copy(), requires_grad=True)
                  for k, v in init_params.items()}

    src_graph = build_city_graph(source.net, source.features, config)
    tgt_graph = build_city_graph(target.net, target.features, config)

    t_src, s_src, m_src = source.labels.arrays(source.net.n)
    stats = {source.net.name: label_stats(t_src, s_src, m_src)}
    y_src = normalize_labels(t_src, s_src, m_src, stats[source.net.name])
    if init_params is None:
        # start the softplus head at the source label means; a head born
        # deep in softplus's flat tail never recovers its gradient
        st = stats[source.net.name]
        means = np.array([st.time_mean, st.speed_mean])
        params["predictor.l2.b"].data[:] = np.log(np.expm1(means))
    if use_target_labels:
        t_tgt, s_tgt, m_tgt = target.labels.arrays(target.net.n)
        stats[target.net.name] = label_stats(t_tgt, s_tgt, m_tgt)
        y_tgt = normalize_labels(t_tgt, s_tgt, m_tgt, stats[target.net.name])
    else:
        y_tgt = np.zeros((target.net.n, 24, 2))
        m_tgt = np.zeros((target.net.n, 24), dtype=bool)

    rng = np.random.default_rng(derive_seed(config.seed, "cost-train"))
    opt = ad.Adam(params, lr=config.lr)
    k_src = min(config.clusters_per_batch, source.part.k_clusters)
    k_tgt = min(config.clusters_per_batch, target.part.k_clusters)
    steps = max(1, math.ceil(source.part.k_clusters / config.clusters_per_batch))

    history: list[dict] = []
    for epoch in range(config.epochs):
        sums = dict.fromkeys(HISTORY_COLUMNS, 0.0)
        for _ in range(steps):
            ts = int(rng.integers(0, 24))
            src_b = _batch(src_graph, source.part, k_src, ts, y_src, m_src,
                           stats[source.net.name], rng)
            tgt_b = _batch(tgt_graph, target.part, k_tgt, ts, y_tgt, m_tgt,
                           stats.get(target.net.name), rng)
            report = train_step(params, config, opt, src_b, tgt_b, rng)
            for key in sums:
                sums[key] += report[key]
        history.append({"epoch": epoch, **{k: v / steps for k, v in sums.items()}})

    model = CostModel(params, config, stats, source.net.name, target.net.name)
    return model, history


# ---------------------------------------------------------------------------
# inference and files


def infer_city(model: CostModel, graph: CityGraph,
               time_slice: int) -> tuple[np.ndarray, np.ndarray]:
    """Predictions for every segment of a city at one time slice.

    Returns (y, z_cost): y is (N, 2) positive (time, speed) in label
    units; z_cost is the (N, latent_dim) cost latents.
    """
    inputs = graph.subgraph_inputs(list(range(graph.n)), time_slice)
    h = encode(model.params, model.config.encoder, inputs)
    z_cost, _ = encode_latents(model.params, h)
    y = predict_cost(model.params, z_cost)
    return y.data, z_cost.data


def predict_cost_table(model: CostModel, graph: CityGraph) -> np.ndarray:
    """(N, 24, 2) positive cost table in label units, for export."""
    out = np.empty((graph.n, 24, 2))
    for ts in range(24):
        y, _ = infer_city(model, graph, ts)
        out[:, ts, :] = y
    return out


def save_cost_model(path, model: CostModel) -> None:
    enc = model.config.encoder
    meta = {
        "kind": "cost-model",
        "encoder": {
            "layers": enc.layers,
            "hidden_dim": enc.hidden_dim,
            "type_embed_dim": enc.type_embed_dim,
            "dir_embed_dim": enc.dir_embed_dim,
            "time_embed_dim": enc.time_embed_dim,
            "leaky_slope": enc.leaky_slope,
            "road_type_vocab": list(enc.road_type_vocab),
        },
        "latent_dim": model.config.latent_dim,
        "weights": {"rank": model.config.weights.rank,
                    "domain": model.config.weights.domain,
                    "orthogonal": model.config.weights.orthogonal},
        "lr": model.config.lr,
        "epochs": model.config.epochs,
        "clusters_per_batch": model.config.clusters_per_batch,
        "seed": model.config.seed,
        "source_city": model.source_city,
        "target_city": model.target_city,
        "label_stats": {name: st.as_dict() for name, st in model.label_stats.items()},
    }
    ad.save_checkpoint(path, model.params, meta)


def load_cost_model(path) -> CostModel:
    params, meta = ad.load_checkpoint(path)
    if meta.get("kind") != "cost-model":
        raise ValueError(f"{path} is not a cost-model checkpoint")
    e = meta["encoder"]
    config = CostModelConfig(
        encoder=EncoderConfig(
            layers=e["layers"], hidden_dim=e["hidden_dim"],
            type_embed_dim=e["type_embed_dim"], dir_embed_dim=e["dir_embed_dim"],
            time_embed_dim=e["time_embed_dim"], leaky_slope=e["leaky_slope"],
            road_type_vocab=tuple(e["road_type_vocab"]),
        ),
        latent_dim=meta["latent_dim"],
        weights=LossWeights(**meta["weights"]),
        lr=meta["lr"], epochs=meta["epochs"],
        clusters_per_batch=meta["clusters_per_batch"], seed=meta["seed"],
    )
    stats = {name: LabelStats(**rec) for name, rec in meta["label_stats"].items()}
    return CostModel(params, config, stats, meta["source_city"], meta["target_city"])


def save_loss_history(path, history: list[dict]) -> None:
    lines = ["epoch," + ",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(",".join([str(int(row["epoch"]))]
                              + [f"{row[c]!r}" for c in HISTORY_COLUMNS]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
