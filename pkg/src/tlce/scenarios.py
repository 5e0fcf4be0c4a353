"""Hand-built networks whose strengths are complementary.

Inputs have two blocks of width ``block``: base-class centers live in the
first, novel-class centers in the second, and isotropic noise covers both.
The RHD stand-in keeps block one and damps block two by ``damping``; the TKN
stand-in does the opposite. RHD alone then confuses novel classes, TKN alone
confuses base classes, and a mixture of the two recovers both.
"""

from __future__ import annotations

import numpy as np

from .data import ProtocolSpec, SessionDataset
from .model import ArchitectureSpec, NetworkParams, init_params
from .numerics import Tensor


def _block_net(block: int, first: float, second: float) -> NetworkParams:
    dim = 2 * block
    params = init_params(ArchitectureSpec(dim, (), dim, dim), seed=0)
    scale = np.r_[np.full(block, first), np.full(block, second)]
    params.theta1[0] = (Tensor(np.diag(scale)), Tensor(np.zeros(dim)))
    params.theta2 = (Tensor(np.eye(dim)), Tensor(np.zeros(dim)))
    return params


def complementary_scenario(
    seed: int = 0,
    block: int = 8,
    num_base: int = 6,
    way: int = 2,
    shot: int = 5,
    num_sessions: int = 3,
    radius: float = 4.0,
    noise: float = 1.0,
    damping: float = 0.2,
    train_per_class: int = 50,
    test_per_class: int = 60,
) -> tuple[list[SessionDataset], NetworkParams, NetworkParams, ProtocolSpec]:
    """Return (sessions, rhd, tkn, protocol) for the constructed instance."""
    rng = np.random.default_rng(seed)
    num_novel = way * (num_sessions - 1)
    zeros = np.zeros(block)

    def centers(n):
        c = rng.normal(size=(n, block))
        return radius * c / np.linalg.norm(c, axis=1, keepdims=True)

    means = [np.r_[c, zeros] for c in centers(num_base)] + [np.r_[zeros, c] for c in centers(num_novel)]
    train, test = {}, {}
    for cid, mu in enumerate(means):
        train[cid] = mu + noise * rng.normal(size=(train_per_class, 2 * block))
        test[cid] = mu + noise * rng.normal(size=(test_per_class, 2 * block))

    base = list(range(num_base))
    sessions = [SessionDataset(1, base, {c: train[c] for c in base}, {c: test[c] for c in base})]
    for t in range(num_sessions - 1):
        group = [num_base + t * way + k for k in range(way)]
        sessions.append(
            SessionDataset(t + 2, group, {c: train[c][:shot] for c in group}, {c: test[c] for c in group})
        )
    spec = ProtocolSpec(num_base, num_novel, way, shot, num_sessions, seed=seed)
    return sessions, _block_net(block, 1.0, damping), _block_net(block, damping, 1.0), spec
