"""Convex fusion of the two similarity vectors and nearest-prototype decisions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .memory import RHD, TKN, ExplicitMemory, score
from .model import NetworkParams


@dataclass(frozen=True)
class EnsembleConfig:
    lam: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")


def combine(s_rhd, s_tkn, cfg: EnsembleConfig) -> np.ndarray:
    """lam * s_rhd + (1 - lam) * s_tkn, elementwise."""
    s_rhd = np.asarray(s_rhd, dtype=np.float64)
    s_tkn = np.asarray(s_tkn, dtype=np.float64)
    if s_rhd.shape != s_tkn.shape:
        raise DimensionError(f"score shapes differ: {s_rhd.shape} vs {s_tkn.shape}")
    return cfg.lam * s_rhd + (1.0 - cfg.lam) * s_tkn


def decide(scores: np.ndarray, class_ids) -> np.ndarray:
    """Row-wise argmax over classes; ties go to the smallest class id."""
    scores = np.atleast_2d(scores)
    ids = np.asarray(class_ids)
    order = np.argsort(ids, kind="stable")
    # argmax returns the first maximum, i.e. the smallest id once columns are sorted by id
    return ids[order][np.argmax(scores[:, order], axis=1)]


def classify(
    em: ExplicitMemory,
    rhd: NetworkParams,
    tkn: NetworkParams,
    cfg: EnsembleConfig,
    query,
) -> tuple[int, np.ndarray]:
    scores = combine(score(em, RHD, rhd, query), score(em, TKN, tkn, query), cfg)
    return int(decide(scores, em.class_ids)[0]), scores
