"""Federated training: FedAvg, noise-aware client weighting and the server loop.

The server never touches client data. Clients upload two kinds of message,
serialised model parameters and a pair of band losses, through a
:class:`Channel` that records every byte that crosses the boundary.
"""

from __future__ import annotations

import json
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dataio, geometry, learner
from .errors import (
    AllSamplesDegenerate,
    EmptyFederation,
    EmptyMask,
    FullMask,
    ShapeMismatch,
    WeightSimplexViolation,
)
from .learner import LearnerConfig, ModelParams, ParamLayer

log = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-6


# -- weights and aggregation ------------------------------------------------


def fedavg_weights(client_sizes) -> np.ndarray:
    n = np.asarray(client_sizes, dtype=float)
    if n.size == 0:
        raise EmptyFederation("no clients")
    if np.any(n < 1):
        raise ValueError("every client needs at least one sample")
    return n / n.sum()


def _check_simplex(w: np.ndarray):
    if np.any(w < 0):
        raise WeightSimplexViolation("negative aggregation weight")
    sums = w.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > SIMPLEX_TOL):
        raise WeightSimplexViolation(f"weights sum to {sums} instead of 1")


def aggregate(models: list[ModelParams], weights) -> ModelParams:
    """Weighted average of client models, layer by layer.

    ``weights`` is a K-vector (same weights for every layer) or a K x L
    matrix. Vectors are broadcast to a matrix so both go through the same
    arithmetic. The sum is taken in client order as
    ``x_1 + sum_i w_i (x_i - x_1)``, which equals the convex combination for
    simplex weights and returns identical inputs unchanged bit for bit.
    """
    if not models:
        raise EmptyFederation("nothing to aggregate")
    k, n_layers = len(models), models[0].num_layers
    shapes = models[0].shapes()
    for m in models[1:]:
        if m.shapes() != shapes:
            raise ShapeMismatch("client models have different layer shapes")
    w = np.asarray(weights, dtype=float)
    if w.ndim == 1:
        w = np.repeat(w[:, None], n_layers, axis=1)
    if w.shape != (k, n_layers):
        raise ShapeMismatch(f"weights {w.shape} do not match {k} models x {n_layers} layers")
    _check_simplex(w)
    layers = []
    for j in range(n_layers):
        base = models[0].layers[j]
        wt, b = base.weights.copy(), base.bias.copy()
        for i in range(1, k):
            other = models[i].layers[j]
            c = float(w[i, j])
            wt += c * (other.weights - base.weights)
            b += c * (other.bias - base.bias)
        layers.append(ParamLayer(wt, b, base.index))
    return ModelParams(layers)


# -- learning difficulty ----------------------------------------------------


@dataclass(frozen=True)
class DifficultyPair:
    q1: float  # mean CE over the inner band
    q2: float  # mean CE over the outer band

    def to_bytes(self) -> bytes:
        return struct.pack("<dd", self.q1, self.q2)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "DifficultyPair":
        return cls(*struct.unpack("<dd", blob))


def band_losses(probs, noisy_mask, clamp: float = 1e-7):
    """Per-pixel CE against ``noisy_mask`` split into the two maximal bands.

    Returns ``(inner_losses, outer_losses)`` as 1-D arrays.
    """
    bands = geometry.maximal_bands(noisy_mask)
    ce, _ = learner.pixel_ce_loss(probs, noisy_mask, clamp)
    return ce[bands.inner], ce[bands.outer]


def difficulty_from_probs(probs, noisy_masks, clamp: float = 1e-7, pooled: bool = False):
    """Band-wise difficulty from precomputed probabilities.

    Samples whose mask is empty or full, or whose bands are empty, are
    skipped. Returns the pair and the number of skipped samples.
    """
    inner, outer = [], []
    skipped = 0
    for p, m in zip(probs, noisy_masks):
        try:
            a, b = band_losses(p, m, clamp)
        except (EmptyMask, FullMask):
            skipped += 1
            continue
        if a.size == 0 or b.size == 0:
            skipped += 1
            continue
        inner.append(a)
        outer.append(b)
    if not inner:
        raise AllSamplesDegenerate("no sample has a usable annotation")
    if pooled:
        q1, q2 = np.concatenate(inner).mean(), np.concatenate(outer).mean()
    else:
        q1 = np.mean([a.mean() for a in inner])
        q2 = np.mean([b.mean() for b in outer])
    return DifficultyPair(float(q1), float(q2)), skipped


# -- clients ----------------------------------------------------------------


@dataclass
class ClientState:
    client_id: int
    images: np.ndarray  # (n, H, W, 1)
    noisy_masks: np.ndarray  # (n, H, W) bool
    cem: object = field(default=None, repr=False)  # ground truth, diagnostics only

    def __post_init__(self):
        if len(self.images) < 1:
            raise ValueError(f"client {self.client_id} has no samples")
        if len(self.images) != len(self.noisy_masks):
            raise ShapeMismatch("images and masks differ in count")

    @property
    def n(self) -> int:
        return len(self.images)

    def train(self, global_params: ModelParams, config: LearnerConfig, epochs: int, seed: int, rnd: int):
        rng = dataio.stream(seed, dataio.STREAM_LOCAL_TRAIN, self.client_id, rnd)
        return learner.local_train(global_params, self.images, self.noisy_masks, config, epochs, rng)


def compute_difficulty(client: ClientState, warmup_model: ModelParams, pooled: bool = False,
                       clamp: float = 1e-7) -> DifficultyPair:
    """Inner/outer band CE of the frozen warm-up model on the client's noisy masks."""
    probs = np.concatenate(
        [learner.forward(warmup_model, client.images[s : s + 16])[1] for s in range(0, client.n, 16)]
    )
    pair, skipped = difficulty_from_probs(probs, client.noisy_masks, clamp, pooled)
    if skipped:
        log.warning("client %d: %d sample(s) skipped in difficulty estimate", client.client_id, skipped)
    return pair


# -- grouping ---------------------------------------------------------------


@dataclass
class GmmFit:
    means: np.ndarray  # (2, 2); row 0 is the large-group component, row 1 the small one
    variances: np.ndarray  # (2, 2) diagonal entries
    weights: np.ndarray  # (2,)
    responsibilities: np.ndarray  # (K, 2), same column order as ``means``
    group_l: list[int]  # 0-based client positions
    group_s: list[int]
    degenerate: bool = False
    iterations: int = 0
    log_likelihood: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "weights": self.weights.tolist(),
            "degenerate": self.degenerate,
            "iterations": self.iterations,
            "log_likelihood": self.log_likelihood,
        }


def _as_points(difficulties) -> np.ndarray:
    if len(difficulties) and isinstance(difficulties[0], DifficultyPair):
        return np.array([[d.q1, d.q2] for d in difficulties], dtype=float)
    return np.asarray(difficulties, dtype=float).reshape(-1, 2)


def _kmeanspp(x: np.ndarray, rng) -> np.ndarray:
    first = x[rng.integers(len(x))]
    d2 = ((x - first) ** 2).sum(axis=1)
    if d2.sum() == 0:
        return np.stack([first, first])
    second = x[rng.choice(len(x), p=d2 / d2.sum())]
    return np.stack([first, second])


def _log_gauss(x, mean, var):
    return -0.5 * (np.log(2 * np.pi * var).sum() + ((x - mean) ** 2 / var).sum(axis=1))


def _single_group(x: np.ndarray) -> GmmFit:
    k = len(x)
    mean = x.mean(axis=0)
    return GmmFit(
        means=np.stack([mean, mean]),
        variances=np.full((2, 2), np.nan),
        weights=np.array([1.0, 0.0]),
        responsibilities=np.column_stack([np.ones(k), np.zeros(k)]),
        group_l=list(range(k)),
        group_s=[],
        degenerate=True,
    )


def fit_client_gmm(difficulties, seed: int = 0, max_iter: int = 500, tol: float = 1e-8,
                   var_floor: float = 1e-6) -> GmmFit:
    """Two-component diagonal Gaussian mixture on the clients' (q1, q2) points.

    EM from a seeded k-means++ start. The component with the larger
    ``q1 - q2`` mean difference becomes the large-group component. With
    fewer than four clients, or all points identical, every client is put in
    the large group and the fit is flagged degenerate.
    """
    x = _as_points(difficulties)
    k = len(x)
    if k < 4 or np.all(x == x[0]):
        log.warning("difficulty points cannot support a two-component fit; using one group")
        return _single_group(x)
    rng = dataio.stream(seed, dataio.STREAM_GMM)
    means = _kmeanspp(x, rng)
    var = np.maximum(x.var(axis=0), var_floor)
    variances = np.stack([var, var])
    mix = np.array([0.5, 0.5])
    prev = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        logp = np.column_stack([np.log(mix[c]) + _log_gauss(x, means[c], variances[c]) for c in range(2)])
        top = logp.max(axis=1, keepdims=True)
        norm = top[:, 0] + np.log(np.exp(logp - top).sum(axis=1))
        ll = float(norm.sum())
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0)
        nk_safe = np.maximum(nk, 1e-300)
        mix = np.clip(nk / k, 1e-12, None)
        mix /= mix.sum()
        means = (resp.T @ x) / nk_safe[:, None]
        variances = np.maximum((resp.T @ x**2) / nk_safe[:, None] - means**2, var_floor)
        if abs(ll - prev) < tol:
            break
        prev = ll
    logp = np.column_stack([np.log(mix[c]) + _log_gauss(x, means[c], variances[c]) for c in range(2)])
    top = logp.max(axis=1, keepdims=True)
    norm = top[:, 0] + np.log(np.exp(logp - top).sum(axis=1))
    resp = np.exp(logp - norm[:, None])
    order = [0, 1] if means[0, 0] - means[0, 1] >= means[1, 0] - means[1, 1] else [1, 0]
    means, variances, mix, resp = means[order], variances[order], mix[order], resp[:, order]
    large = resp[:, 0] >= resp[:, 1]
    return GmmFit(
        means=means,
        variances=variances,
        weights=mix,
        responsibilities=resp,
        group_l=[int(i) for i in np.flatnonzero(large)],
        group_s=[int(i) for i in np.flatnonzero(~large)],
        iterations=it,
        log_likelihood=float(norm.sum()),
    )


def noise_strengths(difficulties, gmm: GmmFit) -> np.ndarray:
    x = _as_points(difficulties)
    s = x[:, 1] - x[:, 0]
    s[gmm.group_l] = x[gmm.group_l, 0] - x[gmm.group_l, 1]
    return s


def quality_weights(s, gmm: GmmFit, r: float = 0.5, group_mass=None) -> np.ndarray:
    """Rank clients inside each group by noise strength.

    Within a group, weight is proportional to ``max(s) - s_i`` so the
    noisiest client gets nothing. The large group carries total mass ``r``
    and the small group ``1 - r`` unless ``group_mass`` overrides the pair.
    A group with all-equal strengths is weighted uniformly; the mass of an
    empty group moves to the other one.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError("r must lie in [0, 1]")
    s = np.asarray(s, dtype=float)
    groups = [np.asarray(gmm.group_l, int), np.asarray(gmm.group_s, int)]
    masses = list(group_mass) if group_mass is not None else [r, 1.0 - r]
    if len(groups[0]) == 0:
        masses = [0.0, 1.0]
    elif len(groups[1]) == 0:
        masses = [1.0, 0.0]
    w = np.zeros(len(s))
    for g, mass in zip(groups, masses):
        if len(g) == 0:
            continue
        sg = s[g]
        gap = sg.max() - sg
        total = gap.sum()
        if total == 0:
            w[g] = mass / len(g)
        else:
            w[g] = mass * gap / total
    return w


def layer_blend(n_layers: int) -> np.ndarray:
    if n_layers == 1:
        return np.array([0.5])
    return np.arange(n_layers) / (n_layers - 1)


def layerwise_weights(w_quantity, w_quality, n_layers: int) -> np.ndarray:
    """K x L matrix moving linearly from quantity weights to quality weights.

    The first column is the quantity vector and the last the quality vector,
    both copied exactly.
    """
    wq = np.asarray(w_quantity, dtype=float)
    wb = np.asarray(w_quality, dtype=float)
    lam = layer_blend(n_layers)
    out = wq[:, None] + lam[None, :] * (wb - wq)[:, None]
    if n_layers > 1:
        out[:, 0] = wq
        out[:, -1] = wb
    return out


@dataclass
class AggregationPlan:
    quantity_weights: np.ndarray
    quality_weights: np.ndarray
    strengths: np.ndarray
    layer_weights: np.ndarray
    balance_r: float
    gmm: GmmFit
    difficulties: list[DifficultyPair]


def build_plan(difficulties, sizes, n_layers: int, mode: str, r: float = 0.5, seed: int = 0) -> AggregationPlan:
    gmm = fit_client_gmm(difficulties, seed)
    s = noise_strengths(difficulties, gmm)
    k = len(s)
    mass = None
    if mode == "intra_gw":
        mass = (len(gmm.group_l) / k, len(gmm.group_s) / k)
    wq = fedavg_weights(sizes)
    wb = quality_weights(s, gmm, r, group_mass=mass)
    return AggregationPlan(
        quantity_weights=wq,
        quality_weights=wb,
        strengths=s,
        layer_weights=layerwise_weights(wq, wb, n_layers),
        balance_r=r,
        gmm=gmm,
        difficulties=list(difficulties),
    )


# -- transport --------------------------------------------------------------


@dataclass
class Message:
    round: int
    client_id: int
    kind: str  # "model" or "difficulty"
    payload: bytes


class Channel:
    """Client-to-server transport that only accepts the two allowed payloads."""

    def __init__(self, record: bool = False):
        self.record = record
        self.messages: list[Message] = []

    def send(self, rnd: int, client_id: int, payload) -> bytes:
        if isinstance(payload, ModelParams):
            kind = "model"
        elif isinstance(payload, DifficultyPair):
            kind = "difficulty"
        else:
            raise TypeError(f"{type(payload).__name__} may not leave a client")
        blob = payload.to_bytes()
        if self.record:
            self.messages.append(Message(rnd, client_id, kind, blob))
        return blob


def params_from_bytes(blob: bytes, template: ModelParams) -> ModelParams:
    """Rebuild parameters from raw bytes using the server's known architecture."""
    dt = template.dtype
    pos = 0
    arrays = []
    for a in template.arrays():
        n = a.size * dt.itemsize
        arrays.append(np.frombuffer(blob[pos : pos + n], dtype=dt).reshape(a.shape).copy())
        pos += n
    if pos != len(blob):
        raise ShapeMismatch("model payload has the wrong size")
    return ModelParams(
        [ParamLayer(arrays[2 * j], arrays[2 * j + 1], layer.index) for j, layer in enumerate(template.layers)]
    )


# -- server -----------------------------------------------------------------

_WORKER_CLIENTS: list[ClientState] = []


def _init_worker(clients):
    global _WORKER_CLIENTS
    _WORKER_CLIENTS = clients


def _train_in_worker(pos, params, config, epochs, seed, rnd):
    return _WORKER_CLIENTS[pos].train(params, config, epochs, seed, rnd)


@dataclass
class RunReport:
    mode: str
    seed: int
    config_hash: str
    rounds: list[dict]
    final: dict
    diagnostics: dict = field(default_factory=dict)
    final_params: ModelParams | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "rounds": self.rounds,
            "final": self.final,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def metric_rows(self) -> list[dict]:
        rows = []
        for r in self.rounds:
            for name in ("test_dice_mean", "test_dice_std", "train_loss_mean"):
                rows.append({"round": r["round"], "metric": name, "value": r[name]})
        return rows

    @property
    def final_dice(self) -> float:
        return self.rounds[-1]["test_dice_mean"]


class Server:
    """Synchronous server loop over a fixed set of clients."""

    def __init__(self, clients: list[ClientState], config: LearnerConfig, epochs: int, seed: int,
                 test_images, test_masks, balance_r: float = 0.5, pooled: bool = False,
                 workers: int = 1, channel: Channel | None = None):
        if not clients:
            raise EmptyFederation("no clients")
        self.clients = clients
        self.config = config
        self.epochs = epochs
        self.seed = seed
        self.test_images = np.asarray(test_images)
        self.test_masks = np.asarray(test_masks, bool)
        self.balance_r = balance_r
        self.pooled = pooled
        self.workers = workers
        self.channel = channel or Channel()
        self.sizes = [c.n for c in clients]
        self._pool = None

    # context management for the optional worker pool
    def __enter__(self):
        if self.workers > 1:
            self._pool = ProcessPoolExecutor(
                max_workers=self.workers, initializer=_init_worker, initargs=(self.clients,)
            )
        return self

    def __exit__(self, *exc):
        if self._pool is not None:
            self._pool.shutdown(cancel_futures=True)
            self._pool = None

    def initial_model(self) -> ModelParams:
        return learner.init_params(self.config, dataio.stream(self.seed, dataio.STREAM_INIT))

    def evaluate(self, params: ModelParams) -> tuple[float, float]:
        pred = learner.predict_masks(params, self.test_images)
        scores = [learner.dice_score(p, t) for p, t in zip(pred, self.test_masks)]
        return float(np.mean(scores)), float(np.std(scores))

    def _local_updates(self, params: ModelParams, rnd: int):
        if self._pool is not None:
            futures = [
                self._pool.submit(_train_in_worker, i, params, self.config, self.epochs, self.seed, rnd)
                for i in range(len(self.clients))
            ]
            results = [f.result() for f in futures]
        else:
            results = [c.train(params, self.config, self.epochs, self.seed, rnd) for c in self.clients]
        models, losses = [], []
        for client, (local, loss) in zip(self.clients, results):
            blob = self.channel.send(rnd, client.client_id, local)
            models.append(params_from_bytes(blob, params))
            losses.append(loss)
        return models, losses

    def run_round(self, params: ModelParams, rnd: int, weights):
        models, losses = self._local_updates(params, rnd)
        return aggregate(models, weights), float(np.mean(losses))

    def collect_difficulties(self, params: ModelParams, rnd: int) -> list[DifficultyPair]:
        out = []
        for c in self.clients:
            pair = compute_difficulty(c, params, pooled=self.pooled, clamp=self.config.prob_clamp)
            out.append(DifficultyPair.from_bytes(self.channel.send(rnd, c.client_id, pair)))
        return out

    def plan(self, params: ModelParams, rnd: int, mode: str) -> AggregationPlan:
        diffs = self.collect_difficulties(params, rnd)
        return build_plan(diffs, self.sizes, params.num_layers, mode, self.balance_r, self.seed)

    def _record(self, history, rnd, mode, params, loss, on_round):
        mean, std = self.evaluate(params)
        row = {
            "round": rnd,
            "mode": mode,
            "test_dice_mean": mean,
            "test_dice_std": std,
            "train_loss_mean": loss,
        }
        history.append(row)
        if on_round is not None:
            on_round(row)

    def warmup(self, warmup_rounds: int, mode: str = "fedavg", on_round=None):
        """FedAvg rounds ``1..warmup_rounds``; returns the global model and history."""
        params = self.initial_model()
        wq = fedavg_weights(self.sizes)
        history: list[dict] = []
        for rnd in range(1, warmup_rounds + 1):
            params, loss = self.run_round(params, rnd, wq)
            self._record(history, rnd, mode, params, loss, on_round)
        return params, history

    def finish(self, params: ModelParams, history: list[dict], rounds: int, warmup_rounds: int,
               mode: str, on_round=None):
        """Rounds ``warmup_rounds+1..rounds`` starting from a warm-up state."""
        history = [dict(h, mode=mode) for h in history]
        wq = fedavg_weights(self.sizes)
        plan = None
        weights = wq
        if mode != "fedavg" and warmup_rounds < rounds:
            plan = self.plan(params, warmup_rounds, mode)
            weights = plan.layer_weights
        for rnd in range(warmup_rounds + 1, rounds + 1):
            params, loss = self.run_round(params, rnd, weights)
            self._record(history, rnd, mode, params, loss, on_round)
        return params, history, plan

    def run(self, rounds: int, warmup_rounds: int, mode: str = "full", on_round=None):
        if not 0 <= warmup_rounds <= rounds:
            raise ValueError("need 0 <= warmup_rounds <= rounds")
        params, history = self.warmup(warmup_rounds, mode, on_round)
        return self.finish(params, history, rounds, warmup_rounds, mode, on_round)


def final_section(clients: list[ClientState], sizes, plan: AggregationPlan | None, mode: str) -> dict:
    ids = [c.client_id for c in clients]
    out = {"client_ids": ids, "quantity_weights": fedavg_weights(sizes).tolist()}
    if plan is None or mode == "fedavg":
        return out
    out.update(
        {
            "group_l": [ids[i] for i in plan.gmm.group_l],
            "group_s": [ids[i] for i in plan.gmm.group_s],
            "difficulty": [[d.q1, d.q2] for d in plan.difficulties],
            "s": plan.strengths.tolist(),
            "quality_weights": plan.quality_weights.tolist(),
            "layer_weights": plan.layer_weights.tolist(),
            "balance_r": plan.balance_r,
            "gmm": plan.gmm.to_dict(),
        }
    )
    return out


@dataclass
class FederationData:
    clients: list[ClientState]
    test_images: np.ndarray
    test_masks: np.ndarray
    corrupted: dataio.CorruptedFederation

    def warmup_train_dice(self, params: ModelParams) -> float:
        """Dice of ``params`` on all training images against the clean masks."""
        scores = []
        for samples in self.corrupted.clients:
            imgs = np.stack([s.image for s in samples])
            pred = learner.predict_masks(params, imgs)
            scores.extend(learner.dice_score(p, s.clean_mask) for p, s in zip(pred, samples))
        return float(np.mean(scores))


def prepare_federation(config: dataio.ExperimentConfig) -> FederationData:
    clean = dataio.generate_synthetic_dataset(config)
    corrupted = dataio.corrupt_federation(
        clean, config.noise.hetero(), config.seed, config.noise.l_sub, config.noise.degree_p
    )
    clients = [
        ClientState(
            client_id=cid,
            images=np.stack([s.image for s in samples]),
            noisy_masks=np.stack([s.noisy_mask for s in samples]),
            cem=cem,
        )
        for cid, (samples, cem) in enumerate(zip(corrupted.clients, corrupted.cems), start=1)
    ]
    test = dataio.generate_test_set(config)
    return FederationData(
        clients=clients,
        test_images=np.stack([s.image for s in test]),
        test_masks=np.stack([s.clean_mask for s in test]),
        corrupted=corrupted,
    )


def run_modes(config: dataio.ExperimentConfig, modes, data: FederationData | None = None,
              channel: Channel | None = None, on_round=None) -> dict[str, RunReport]:
    """Run several aggregation modes that share one warm-up phase.

    All modes are identical up to the end of the warm-up, so it is computed
    once; each mode then continues from the same global model. The result
    for every mode equals what a separate run would produce.
    """
    data = data or prepare_federation(config)
    cfg_hash = config.hash()
    reports = {}
    server = Server(
        data.clients, config.learner, config.local_epochs, config.seed,
        data.test_images, data.test_masks, balance_r=config.balance_r,
        pooled=config.pooled_difficulty, workers=config.workers, channel=channel,
    )
    with server:
        warm, history = server.warmup(config.warmup_rounds, modes[0], on_round)
        diagnostics = {
            "warmup_train_dice": data.warmup_train_dice(warm),
            "true_mu": [c.cem.mu for c in data.clients],
            "true_sigma": [c.cem.sigma for c in data.clients],
            "annihilated_samples": [len(w) for w in data.corrupted.warnings],
        }
        for i, mode in enumerate(modes):
            cb = on_round if i == 0 else None
            params, hist, plan = server.finish(
                warm, history, config.rounds, config.warmup_rounds, mode, cb
            )
            reports[mode] = RunReport(
                mode=mode,
                seed=config.seed,
                config_hash=cfg_hash,
                rounds=hist,
                final=final_section(data.clients, server.sizes, plan, mode),
                diagnostics=diagnostics,
                final_params=params,
            )
    return reports


def run_federation(config: dataio.ExperimentConfig, data: FederationData | None = None,
                   channel: Channel | None = None, on_round=None) -> RunReport:
    return run_modes(config, [config.mode], data, channel, on_round)[config.mode]
