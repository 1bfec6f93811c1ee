"""KL, Jensen-Shannon and total-variation on finite discrete distributions (nats)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError

# Saturating stand-in for an infinite KL divergence.
KL_INF = float("inf")


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError(f"distributions must be 1-D and equal length, got {p.shape} and {q.shape}")
    return p, q


def validate_distribution(p, tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ShapeError("distribution must be a non-empty vector")
    if np.any(p < 0):
        raise ValidationError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > tol:
        raise ValidationError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def kl(p, q) -> float:
    """Sum of p_k ln(p_k / q_k); terms with p_k = 0 vanish, p_k > 0 = q_k saturates."""
    p, q = _pair(p, q)
    support = p > 0
    if np.any(q[support] == 0):
        return KL_INF
    ps, qs = p[support], q[support]
    return float(max(np.sum(ps * np.log(ps / qs)), 0.0))


def _half_js_terms(x: np.ndarray, s: np.ndarray) -> float:
    # x ln(2x / s) with s = p + q; using the unhalved sum avoids m = s / 2
    # underflowing to zero for subnormal entries.
    nz = x > 0
    return float(np.sum(x[nz] * np.log(2.0 * x[nz] / s[nz])))


def js(p, q) -> float:
    """0.5 KL(p || m) + 0.5 KL(q || m) with m = (p + q) / 2; finite, within [0, ln 2]."""
    p, q = _pair(p, q)
    s = p + q
    value = 0.5 * (_half_js_terms(p, s) + _half_js_terms(q, s))
    return float(min(max(value, 0.0), math.log(2.0)))


def tv(p, q) -> float:
    p, q = _pair(p, q)
    return float(min(0.5 * np.sum(np.abs(p - q)), 1.0))


def empirical_label_distribution(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValidationError("cannot estimate a label distribution from no labels")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValidationError(f"labels must lie in [0, {num_classes})")
    counts = np.bincount(labels.astype(np.int64), minlength=num_classes)
    return counts / labels.size


def distribution_from_counts(counts) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValidationError("counts sum to zero")
    return counts / total


def pairwise_matrix(dists: list[np.ndarray], fn) -> np.ndarray:
    T = len(dists)
    out = np.zeros((T, T))
    for i in range(T):
        for j in range(i + 1, T):
            out[i, j] = out[j, i] = fn(dists[i], dists[j])
    return out


@dataclass
class DivergenceReport:
    label_js: np.ndarray
    tv: np.ndarray
    semantic_E: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @classmethod
    def from_distributions(cls, dists: list[np.ndarray], semantic_E=None) -> "DivergenceReport":
        T = len(dists)
        E = np.zeros((T, T)) if semantic_E is None else np.asarray(semantic_E, dtype=np.float64)
        return cls(pairwise_matrix(dists, js), pairwise_matrix(dists, tv), E)

    def to_dict(self) -> dict:
        return {
            "label_js": self.label_js.tolist(),
            "tv": self.tv.tolist(),
            "semantic_E": self.semantic_E.tolist(),
        }
