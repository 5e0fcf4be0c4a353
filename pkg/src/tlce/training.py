"""Training procedures for the two embedding networks.

* ``pretrain_ce``     supervised cross-entropy on the base session (RHD stage 1,
                      and the plain-CE baseline transfer network)
* ``meta_train_rhd``  episodic training through softabs attention over
                      tanh-cosine similarities to support prototypes
* ``train_tkn``       cross-entropy over bias-free cosine logits

Every trainer works on a copy of the incoming parameters and is a
deterministic function of (params, data, config).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import SessionDataset
from .errors import ConfigError, DataError, ProtocolError
from .model import (
    HEAD_CE,
    HEAD_COSINE,
    NetworkParams,
    forward_embed,
    forward_logits_ce,
    forward_logits_cosine,
)
from .numerics import Tensor

log = logging.getLogger("tlce.training")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 128
    epochs: int = 120
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must both be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass(frozen=True)
class SharpeningConfig:
    beta: float = 10.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")


@dataclass
class Episode:
    """Class-major support/query sets over every base class."""

    class_ids: list[int]
    support: np.ndarray
    query: np.ndarray
    query_targets: np.ndarray
    shots: int


class SGD:
    def __init__(self, params: list[Tensor], lr: float, momentum: float = 0.0):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            if self.momentum:
                v *= self.momentum
                v += p.grad
                p.data = p.data - self.lr * v
            else:
                p.data = p.data - self.lr * p.grad


# -- losses -------------------------------------------------------------------


def ce_loss(params: NetworkParams, x, targets: np.ndarray) -> Tensor:
    return nx.log_softmax_ce(forward_logits_ce(params, x), targets)


def cosine_ce_loss(params: NetworkParams, x, targets: np.ndarray) -> Tensor:
    return nx.log_softmax_ce(forward_logits_cosine(params, x), targets)


def sharpening(c, beta: float = 10.0):
    """Soft-absolute sharpening: sigmoid(beta(c - 0.5)) + sigmoid(beta(-c - 0.5)).

    Tensors go through the recorded graph; anything else is evaluated with numpy.
    """
    if isinstance(c, Tensor):
        return nx.sigmoid(beta * (c - 0.5)) + nx.sigmoid(beta * (-1.0 * c - 0.5))
    with nx.no_grad():
        out = sharpening(Tensor(c), beta).data
    return float(out) if out.ndim == 0 else out


def softabs_attention(scores, beta: float = 10.0):
    """Normalise sharpened scores along the last axis into a probability vector."""
    if isinstance(scores, Tensor):
        eps = sharpening(scores, beta)
        return eps / nx.sum(eps, axis=-1, keepdims=True)
    with nx.no_grad():
        return softabs_attention(Tensor(scores), beta).data


def episode_loss(params: NetworkParams, episode: Episode, beta: float) -> Tensor:
    """Mean negative log softabs attention on the true class over the queries."""
    n_cls, k = len(episode.class_ids), episode.shots
    n_support = len(episode.support)
    _, emb = forward_embed(params, np.concatenate([episode.support, episode.query]))
    # support rows are class-major, so prototypes are one averaging matmul away
    averager = Tensor(np.kron(np.eye(n_cls), np.full((1, k), 1.0 / k)))
    protos = averager @ nx.take_rows(emb, np.arange(n_support))
    queries = nx.take_rows(emb, np.arange(n_support, len(emb.data)))
    scores = nx.cosine_matrix(nx.tanh_map(queries), nx.tanh_map(protos))
    attn = softabs_attention(scores, beta)
    onehot = np.zeros(attn.shape)
    onehot[np.arange(len(onehot)), episode.query_targets] = 1.0
    return -nx.mean(nx.log(nx.sum(attn * Tensor(onehot), axis=1)))


def sample_episode(
    base: SessionDataset, shots: int, queries: int, rng: np.random.Generator
) -> Episode:
    support, query, targets = [], [], []
    for i, c in enumerate(base.class_ids):
        pool = base.train[c]
        if len(pool) < shots + queries:
            raise ProtocolError(
                f"class {c} has {len(pool)} samples; an episode needs {shots + queries}"
            )
        idx = rng.choice(len(pool), size=shots + queries, replace=False)
        support.append(pool[idx[:shots]])
        query.append(pool[idx[shots:]])
        targets.extend([i] * queries)
    return Episode(
        list(base.class_ids),
        np.concatenate(support),
        np.concatenate(query),
        np.asarray(targets, dtype=np.int64),
        shots,
    )


# -- trainers -----------------------------------------------------------------


def _labels(base: SessionDataset) -> tuple[np.ndarray, np.ndarray]:
    if not base.class_ids or base.num_train == 0:
        raise DataError("training data is empty")
    x, y = base.train_arrays()
    index = {c: i for i, c in enumerate(base.class_ids)}
    return x, np.array([index[c] for c in y], dtype=np.int64)


def _fit(params, base, cfg, loss_fn, stage, history):
    x, y = _labels(base)
    if params.num_classes != len(base.class_ids):
        raise ConfigError(
            f"head has {params.num_classes} outputs but the data has {len(base.class_ids)} classes"
        )
    params = params.copy()
    opt = SGD(params.trainable(), cfg.learning_rate, cfg.momentum)
    rng = np.random.default_rng(cfg.seed)
    n = len(x)
    probe = np.sort(rng.choice(n, size=min(n, cfg.batch_size), replace=False))

    def probe_loss():
        with nx.no_grad():
            return loss_fn(params, x[probe], y[probe]).item()

    if history is not None:
        history.append({"epoch": 0, "loss": float("nan"), "probe_loss": probe_loss()})
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss = loss_fn(params, x[idx], y[idx])
            opt.zero_grad()
            nx.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        entry = {"epoch": epoch, "loss": total / n, "probe_loss": probe_loss()}
        if history is not None:
            history.append(entry)
        log.info("stage=%s epoch=%d loss=%.6f probe_loss=%.6f", stage, epoch, entry["loss"], entry["probe_loss"])
    opt.zero_grad()
    return params


def pretrain_ce(
    params: NetworkParams,
    base_data: SessionDataset,
    cfg: TrainConfig,
    history: list | None = None,
    stage: str = "rhd-pretrain",
) -> NetworkParams:
    """Minibatch SGD on softmax cross-entropy of the linear (biased) head."""
    if params.head != HEAD_CE:
        raise ConfigError("pretrain_ce needs a network with a plain CE head")
    return _fit(params, base_data, cfg, ce_loss, stage, history)


def train_tkn(
    params: NetworkParams,
    base_data: SessionDataset,
    cfg: TrainConfig,
    history: list | None = None,
    stage: str = "tkn",
) -> NetworkParams:
    """Minibatch SGD on cross-entropy over cos(mu2, W_i) logits."""
    if params.head != HEAD_COSINE or params.head_b is not None:
        raise ConfigError("train_tkn needs a bias-free cosine head")
    return _fit(params, base_data, cfg, cosine_ce_loss, stage, history)


def meta_train_rhd(
    params: NetworkParams,
    base_data: SessionDataset,
    cfg: TrainConfig,
    sharp: SharpeningConfig = SharpeningConfig(),
    episodes: int = 200,
    shots: int = 5,
    queries: int | None = None,
    history: list | None = None,
) -> NetworkParams:
    """Episodic training: every episode is |C1|-way ``shots``-shot over all base classes.

    The classification head is dropped; prototypes come from each episode's
    own support set. ``history`` receives the loss on one fixed probe episode
    after every logging block.
    """
    if len(base_data.class_ids) < 2:
        raise ProtocolError("episodic training needs at least 2 base classes")
    queries = shots if queries is None else queries
    params = params.without_head()
    if episodes == 0:
        return params
    opt = SGD(params.trainable(), cfg.learning_rate, cfg.momentum)
    rng = np.random.default_rng(cfg.seed)
    probe = sample_episode(base_data, shots, queries, rng)
    block = max(1, episodes // 20)

    def probe_loss():
        with nx.no_grad():
            return episode_loss(params, probe, sharp.beta).item()

    if history is not None:
        history.append({"episode": 0, "probe_loss": probe_loss()})
    running = 0.0
    for ep in range(1, episodes + 1):
        loss = episode_loss(params, sample_episode(base_data, shots, queries, rng), sharp.beta)
        opt.zero_grad()
        nx.backward(loss)
        opt.step()
        running += loss.item()
        if ep % block == 0 or ep == episodes:
            n = block if ep % block == 0 else ep % block
            pl = probe_loss()
            if history is not None:
                history.append({"episode": ep, "loss": running / n, "probe_loss": pl})
            log.info("stage=rhd-meta episode=%d loss=%.6f probe_loss=%.6f", ep, running / n, pl)
            running = 0.0
    opt.zero_grad()
    return params
