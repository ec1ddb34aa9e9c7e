"""Softmax-entropy estimates of aleatoric uncertainty.

All entropies are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .nn import Batch, ModelParams, forward

_NORM_TOL = 1e-9


def _row_entropy(logits: np.ndarray) -> np.ndarray:
    # H = lse(z) - sum_c p_c z_c, with z shifted by its max; exact for one-hot limits
    z = logits - logits.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    s = ez.sum(axis=-1, keepdims=True)
    p = ez / s
    h = np.log(s[..., 0]) - np.sum(p * z, axis=-1)
    return np.maximum(h, 0.0)


def softmax_entropy(logits) -> float:
    """Entropy of ``softmax(logits)`` for a single vector of C >= 2 logits."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise DomainError(f"need a 1-D vector of at least 2 logits, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DomainError("logits must be finite")
    return float(_row_entropy(z))


def softmax_entropies(logits) -> np.ndarray:
    """Row-wise :func:`softmax_entropy` for an ``(n, C)`` logit matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise DomainError(f"need an (n, C>=2) logit matrix, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise DomainError("logits must be finite")
    return _row_entropy(z)


def aleatoric_score(params: ModelParams, train_set: Batch) -> float:
    """Mean predictive entropy of ``params`` over ``train_set``."""
    if len(train_set) == 0:
        raise DomainError("cannot score an empty training set")
    return float(np.mean(softmax_entropies(forward(params, train_set.features))))


@dataclass(frozen=True)
class UncertaintyDecomposition:
    total: float
    aleatoric: float
    epistemic: float


def _entropy_of_probs(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def decompose_uncertainty(ensemble_probs) -> UncertaintyDecomposition:
    """Split predictive entropy of a K-member ensemble into aleatoric and epistemic parts.

    ``ensemble_probs`` is a ``(K, C)`` matrix whose rows are the members'
    predictive distributions for one query.
    """
    P = np.atleast_2d(np.asarray(ensemble_probs, dtype=np.float64))
    if P.ndim != 2 or P.shape[0] < 1:
        raise DomainError(f"expected a (K, C) probability matrix, got shape {P.shape}")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > _NORM_TOL):
        raise DomainError("every ensemble row must be a probability distribution")
    total = float(_entropy_of_probs(P.mean(axis=0)))
    aleatoric = float(np.mean(_entropy_of_probs(P)))
    total = max(total, 0.0)
    aleatoric = max(aleatoric, 0.0)
    # Jensen guarantees total >= aleatoric; clamp rounding noise only
    epistemic = max(total - aleatoric, 0.0)
    if epistemic == 0.0:
        total = aleatoric
    return UncertaintyDecomposition(total, aleatoric, epistemic)
