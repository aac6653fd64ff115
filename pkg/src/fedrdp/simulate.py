"""Seedable federated-learning simulator with per-step privacy ledgering.

The training loop follows the standard pattern: each round, a uniform subset
of the available clients is selected; every selected client draws a
fixed-size minibatch from its local dataset, averages clipped per-sample
update directions, adds isotropic Gaussian noise with per-coordinate
standard deviation clip * sigma / batch_size, and the server adds the mean
of the returned updates to the model.  Every client participation lands in a
ParticipationLedger with the exact (q, sigma, clip, batch_size) used, so the
accountant can replay privacy per client afterwards.

Model family: multinomial logistic regression on synthetic Gaussian blobs.
Class centers are mutually orthogonal with norm BLOB_RADIUS, so the classes
are linearly separable by a wide margin and convergence is checkable against
a deterministic full-batch baseline.  The scalar step size is folded into
the per-sample update direction before clipping.

RNG discipline: one root seed; every random draw uses a fresh generator
derived via numpy SeedSequence from an entropy tuple

    (seed, stream_tag)                    data centers
    (seed, stream_tag, client_id)         client data
    (seed, stream_tag, round)             availability, selection, trace
    (seed, stream_tag, round, client_id)  client batch + noise

with the tags below.  This makes trajectories bit-reproducible regardless
of the order or parallelism in which client updates are computed.  Poisson
batch sampling exists only for the batch-size trace contrast; the training
loop itself always draws fixed-size batches (the accountant covers nothing
else).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .accountant import (
    DEFAULT_ALPHAS,
    ParticipationLedger,
    PrivacyBudget,
    StepParams,
    calibrate_sigma,
    compose_client_rdp,
    rdp_to_dp,
)

__all__ = [
    "BLOB_RADIUS",
    "SimConfig",
    "ClientState",
    "ModelVector",
    "RoundRecord",
    "select_clients",
    "sample_fixed_batch",
    "sample_poisson_batch",
    "clip_gradient",
    "client_update",
    "server_update",
    "run_training",
    "batch_size_trace",
    "generate_client_data",
    "zero_model",
    "evaluate_accuracy",
    "client_epsilon_report",
    "write_artifacts",
]

BLOB_RADIUS = 4.0

# SeedSequence stream tags (second entropy word).
_STREAM_CENTERS = 1
_STREAM_CLIENT_DATA = 2
_STREAM_AVAILABILITY = 3
_STREAM_SELECTION = 4
_STREAM_CLIENT_STEP = 5
_STREAM_TRACE = 6

_CONFIG_KEYS = {
    "rounds", "clients", "m_t", "d", "classes", "points_per_client",
    "batch_size", "clip", "sigma", "target_epsilon", "delta", "seed",
    "sampler", "dropout_prob", "step_size",
}


def _rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(entropy)))


@dataclass(frozen=True)
class SimConfig:
    """Run configuration; loaded from a JSON file with the same key names.

    Exactly one of sigma / target_epsilon must be set.  With target_epsilon,
    the noise multiplier is calibrated for `rounds` steps at sampling ratio
    batch_size / points_per_client, which upper-bounds every client's actual
    participation count, so each client's realized epsilon is at most the
    target.
    """

    rounds: int
    clients: int
    d: int
    classes: int
    points_per_client: int
    batch_size: int
    clip: float
    m_t: int | None = None
    sigma: float | None = None
    target_epsilon: float | None = None
    delta: float = 1e-5
    seed: int = 0
    sampler: str = "fixed"
    dropout_prob: float = 0.0
    step_size: float = 0.1

    def __post_init__(self):
        if self.m_t is None:
            object.__setattr__(self, "m_t", self.clients)
        checks = [
            (self.rounds >= 1, "rounds must be >= 1"),
            (self.clients >= 1, "clients must be >= 1"),
            (0 <= self.m_t <= self.clients, "m_t must lie in [0, clients]"),
            (self.d >= 1, "d must be >= 1"),
            (2 <= self.classes <= self.d, "classes must lie in [2, d]"),
            (self.points_per_client >= 1, "points_per_client must be >= 1"),
            (1 <= self.batch_size <= self.points_per_client,
             "batch_size must lie in [1, points_per_client]"),
            (self.clip > 0, "clip must be > 0"),
            (0 < self.delta < 1, "delta must lie in (0, 1)"),
            (self.seed >= 0, "seed must be >= 0"),
            (self.sampler in ("fixed", "poisson"), "sampler must be fixed or poisson"),
            (0 <= self.dropout_prob < 1, "dropout_prob must lie in [0, 1)"),
            (self.step_size > 0, "step_size must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        if (self.sigma is None) == (self.target_epsilon is None):
            raise ValueError("exactly one of sigma / target_epsilon must be set")
        if self.sigma is not None and not (self.sigma >= 0 and math.isfinite(self.sigma)):
            raise ValueError("sigma must be a finite real >= 0")
        if self.target_epsilon is not None and not self.target_epsilon > 0:
            raise ValueError("target_epsilon must be > 0")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @property
    def sampling_ratio(self) -> float:
        return self.batch_size / self.points_per_client

    def resolve_sigma(self) -> float:
        """The noise multiplier to run with (calibrating if necessary)."""
        if self.sigma is not None:
            return self.sigma
        return calibrate_sigma(
            PrivacyBudget(self.target_epsilon, self.delta),
            q=self.sampling_ratio,
            steps=self.rounds,
        )


@dataclass(frozen=True, eq=False)
class ModelVector:
    """Flat weight vector of a (classes x features) logistic model."""

    weights: np.ndarray
    classes: int
    features: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size != self.classes * self.features:
            raise ValueError(
                f"weights must be a flat vector of length classes*features "
                f"= {self.classes * self.features}, got shape {w.shape}"
            )
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)

    @property
    def dimension(self) -> int:
        return self.weights.size

    def as_matrix(self) -> np.ndarray:
        return self.weights.reshape(self.classes, self.features)


@dataclass(frozen=True, eq=False)
class ClientState:
    client_id: int
    features: np.ndarray  # (n_points, d)
    labels: np.ndarray  # (n_points,) ints in [0, classes)
    batch_size: int
    clip: float
    sigma: float
    step_size: float
    rng_seed: int

    def __post_init__(self):
        if len(self.features) != len(self.labels) or len(self.features) == 0:
            raise ValueError("features and labels must be equal-length and non-empty")
        if not 1 <= self.batch_size <= len(self.features):
            raise ValueError("batch_size must lie in [1, dataset size]")

    @property
    def dataset_size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class RoundRecord:
    """Per-round log entry: who was selected and what they sent back.

    batch_sizes and update_norms align with `selected` (ascending client
    id); update_norms are pre-noise norms of the clipped-average update.
    """

    t: int
    selected: tuple[int, ...]
    batch_sizes: tuple[int, ...]
    update_norms: tuple[float, ...]


def zero_model(d: int, classes: int) -> ModelVector:
    return ModelVector(np.zeros(classes * d), classes=classes, features=d)


def generate_client_data(config: SimConfig, sigma: float) -> list[ClientState]:
    """Synthetic blob datasets, one per client, sharing the class centers.

    Centers are orthonormal directions scaled to BLOB_RADIUS (seeded QR),
    points are center + standard normal noise, labels round-robin over
    classes so every client sees every class.
    """
    raw = _rng(config.seed, _STREAM_CENTERS).normal(size=(config.d, config.classes))
    basis, _ = np.linalg.qr(raw)
    centers = BLOB_RADIUS * basis.T[: config.classes]  # (classes, d)
    states = []
    for cid in range(config.clients):
        rng = _rng(config.seed, _STREAM_CLIENT_DATA, cid)
        labels = np.arange(config.points_per_client) % config.classes
        points = centers[labels] + rng.normal(size=(config.points_per_client, config.d))
        states.append(
            ClientState(
                client_id=cid,
                features=points,
                labels=labels,
                batch_size=config.batch_size,
                clip=config.clip,
                sigma=sigma,
                step_size=config.step_size,
                rng_seed=config.seed,
            )
        )
    return states


def select_clients(available: Sequence[int] | set[int], m_t: int, rng: np.random.Generator) -> set[int]:
    """Uniformly random size-m_t subset of the available client ids."""
    pool = sorted(available)
    if m_t > len(pool):
        raise ValueError(f"cannot select {m_t} clients from {len(pool)} available")
    if m_t == 0:
        return set()
    picked = rng.choice(len(pool), size=m_t, replace=False)
    return {pool[i] for i in picked}


def sample_fixed_batch(dataset_size: int, batch_size: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random subset of exactly batch_size indices, sorted."""
    if not 1 <= batch_size <= dataset_size:
        raise ValueError(
            f"batch_size must lie in [1, {dataset_size}], got {batch_size}"
        )
    return np.sort(rng.choice(dataset_size, size=batch_size, replace=False))


def sample_poisson_batch(dataset_size: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Each index included independently with probability `rate`; sorted."""
    if not 0 < rate <= 1:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    return np.nonzero(rng.random(dataset_size) < rate)[0]


def clip_gradient(g: np.ndarray, clip: float) -> np.ndarray:
    """Scale g to norm at most clip, preserving direction."""
    if clip <= 0:
        raise ValueError(f"clip must be > 0, got {clip}")
    g = np.asarray(g, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    if norm <= clip:
        return g.copy()
    return g * (clip / norm)


def _per_sample_directions(model: ModelVector, X: np.ndarray, y: np.ndarray, step_size: float) -> np.ndarray:
    """Per-sample update directions -step * grad of the logistic loss, flat.

    Returns an (n, classes*features) array; row i is the direction sample i
    votes for before clipping.
    """
    W = model.as_matrix()
    scores = X @ W.T  # (n, classes)
    scores -= scores.max(axis=1, keepdims=True)
    exps = np.exp(scores)
    probs = exps / exps.sum(axis=1, keepdims=True)
    probs[np.arange(len(y)), y] -= 1.0  # now softmax - onehot
    # grad of loss wrt W for sample i is outer(probs_i, x_i)
    grads = probs[:, :, None] * X[:, None, :]
    return (-step_size) * grads.reshape(len(y), -1)


def _clip_rows(G: np.ndarray, clip: float) -> np.ndarray:
    norms = np.linalg.norm(G, axis=1)
    scale = np.minimum(1.0, clip / np.maximum(norms, np.finfo(np.float64).tiny))
    return G * scale[:, None]


def _noisy_update(client: ClientState, model: ModelVector, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One client step: (update vector, pre-noise norm of the clipped mean)."""
    if model.features != client.features.shape[1]:
        raise ValueError(
            f"model has {model.features} features, client "
            f"{client.client_id} data has {client.features.shape[1]}"
        )
    idx = sample_fixed_batch(client.dataset_size, client.batch_size, rng)
    G = _per_sample_directions(model, client.features[idx], client.labels[idx], client.step_size)
    mean = _clip_rows(G, client.clip).mean(axis=0)
    prenoise_norm = float(np.linalg.norm(mean))
    if client.sigma > 0:
        noise_std = client.clip * client.sigma / client.batch_size
        mean = mean + rng.normal(0.0, noise_std, size=mean.shape)
    return mean, prenoise_norm


def client_update(client: ClientState, model: ModelVector, rng: np.random.Generator) -> np.ndarray:
    """Average of clipped per-sample directions over a fixed-size batch, plus
    Gaussian noise with per-coordinate std clip * sigma / batch_size."""
    return _noisy_update(client, model, rng)[0]


def server_update(model: ModelVector, updates: Sequence[np.ndarray], m_t: int) -> ModelVector:
    if len(updates) != m_t or m_t < 1:
        raise ValueError(f"expected {m_t} updates, got {len(updates)}")
    stacked = np.stack([np.asarray(u, dtype=np.float64) for u in updates])
    if stacked.shape[1] != model.dimension:
        raise ValueError(
            f"update dimension {stacked.shape[1]} does not match model {model.dimension}"
        )
    return ModelVector(
        model.weights + stacked.mean(axis=0),
        classes=model.classes,
        features=model.features,
    )


def run_training(
    config: SimConfig, ledger: ParticipationLedger | None = None
) -> tuple[ModelVector, list[RoundRecord], ParticipationLedger]:
    """Run the full federated loop, recording every participation.

    Rounds are 1-based.  With dropout, each client is independently
    unavailable with probability dropout_prob each round and the round
    selects min(m_t, available) clients.  Aggregation is in ascending
    client-id order, so results do not depend on scheduling.
    """
    if config.sampler != "fixed":
        raise ValueError(
            "run_training draws fixed-size batches only (the accountant has "
            "no poisson-sampling bound); use batch_size_trace for the contrast"
        )
    if ledger is None:
        ledger = ParticipationLedger()
    sigma = config.resolve_sigma()
    clients = generate_client_data(config, sigma)
    model = zero_model(config.d, config.classes)
    step = StepParams(
        q=config.sampling_ratio,
        sigma=sigma,
        clip=config.clip,
        batch_size=config.batch_size,
    )
    records: list[RoundRecord] = []
    for t in range(1, config.rounds + 1):
        if config.dropout_prob > 0:
            draws = _rng(config.seed, _STREAM_AVAILABILITY, t).random(config.clients)
            available = [cid for cid in range(config.clients) if draws[cid] >= config.dropout_prob]
        else:
            available = list(range(config.clients))
        m_eff = min(config.m_t, len(available))
        selected = select_clients(available, m_eff, _rng(config.seed, _STREAM_SELECTION, t))
        chosen = sorted(selected)
        updates = []
        norms = []
        for cid in chosen:
            try:
                upd, norm = _noisy_update(
                    clients[cid], model, _rng(config.seed, _STREAM_CLIENT_STEP, t, cid)
                )
            except Exception as exc:
                raise RuntimeError(f"round {t}, client {cid}: {exc}") from exc
            updates.append(upd)
            norms.append(norm)
            ledger.record(cid, t, step)
        if updates:
            model = server_update(model, updates, m_eff)
        records.append(
            RoundRecord(
                t=t,
                selected=tuple(chosen),
                batch_sizes=(config.batch_size,) * len(chosen),
                update_norms=tuple(norms),
            )
        )
    return model, records, ledger


def batch_size_trace(config: SimConfig, sampler: str, rounds: int) -> list[int]:
    """Realized batch size per round for the chosen sampler.

    The fixed sampler always returns batch_size elements; the poisson
    sampler includes each of the points_per_client records independently
    with probability batch_size / points_per_client.
    """
    if sampler not in ("fixed", "poisson"):
        raise ValueError(f"sampler must be fixed or poisson, got {sampler!r}")
    if rounds < 0:
        raise ValueError("rounds must be >= 0")
    n = config.points_per_client
    sizes = []
    for t in range(1, rounds + 1):
        rng = _rng(config.seed, _STREAM_TRACE, t)
        if sampler == "fixed":
            sizes.append(int(len(sample_fixed_batch(n, config.batch_size, rng))))
        else:
            sizes.append(int(len(sample_poisson_batch(n, config.sampling_ratio, rng))))
    return sizes


def evaluate_accuracy(model: ModelVector, clients: Sequence[ClientState]) -> float:
    """Fraction of correctly classified points over the union of datasets."""
    X = np.concatenate([c.features for c in clients])
    y = np.concatenate([c.labels for c in clients])
    pred = np.argmax(X @ model.as_matrix().T, axis=1)
    return float(np.mean(pred == y))


def client_epsilon_report(
    ledger: ParticipationLedger,
    delta: float,
    alphas=DEFAULT_ALPHAS,
) -> list[tuple[int, int, float]]:
    """(client_id, participations, epsilon) rows for every ledgered client.

    Steps admitting no finite bound (sigma = 0 or full batch) report
    epsilon = +inf rather than raising: a non-private run is a legitimate
    simulator configuration and the report should say so.
    """
    rows = []
    for cid in ledger.clients():
        try:
            curve = compose_client_rdp(ledger, cid, alphas)
            budget, _ = rdp_to_dp(curve, delta)
            eps = budget.epsilon
        except ValueError:
            eps = math.inf
        rows.append((cid, ledger.participation_count(cid), eps))
    return rows


def write_artifacts(
    outdir,
    model: ModelVector,
    records: Sequence[RoundRecord],
    ledger: ParticipationLedger,
    delta: float,
) -> dict[str, str]:
    """Write model.txt, rounds.csv, clients.csv, ledger.tsv under outdir.

    All output is deterministic given its inputs (no timestamps, fixed row
    order), so identical runs produce byte-identical files.
    """
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "model": os.path.join(outdir, "model.txt"),
        "rounds": os.path.join(outdir, "rounds.csv"),
        "clients": os.path.join(outdir, "clients.csv"),
        "ledger": os.path.join(outdir, "ledger.tsv"),
    }
    with open(paths["model"], "w", encoding="ascii") as fh:
        for w in model.weights:
            fh.write(f"{float(w)!r}\n")
    with open(paths["rounds"], "w", encoding="ascii") as fh:
        fh.write("t,client_id,batch_size,update_norm\n")
        for rec in records:
            for cid, bs, norm in zip(rec.selected, rec.batch_sizes, rec.update_norms):
                fh.write(f"{rec.t},{cid},{bs},{norm:.12g}\n")
    with open(paths["clients"], "w", encoding="ascii") as fh:
        fh.write("client_id,participations,epsilon\n")
        for cid, count, eps in client_epsilon_report(ledger, delta):
            fh.write(f"{cid},{count},{eps:.12g}\n")
    ledger.write(paths["ledger"])
    return paths
