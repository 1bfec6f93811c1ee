"""Global semantic matching: moving-average class centroids per task.

The loss for a step is computed on the centroids the bank *would* hold after
absorbing the current batch, ``gamma * stored + (1 - gamma) * batch`` (or the
batch centroid itself on first sight of a class).  Only the batch part carries
gradient; the stored part is a constant.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class CentroidBank:
    centroids: np.ndarray  # (T, K, d)
    initialized: np.ndarray  # (T, K) bool
    gamma: float = 0.7

    @classmethod
    def empty(cls, num_tasks: int, num_classes: int, dim: int, gamma: float = 0.7) -> "CentroidBank":
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        return cls(
            np.zeros((num_tasks, num_classes, dim)),
            np.zeros((num_tasks, num_classes), dtype=bool),
            gamma,
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.centroids.shape

    def copy(self) -> "CentroidBank":
        return CentroidBank(self.centroids.copy(), self.initialized.copy(), self.gamma)

    def to_dict(self) -> dict:
        T, K, _ = self.shape
        return {
            "gamma": self.gamma,
            "tasks": [
                {str(k): self.centroids[t, k].tolist() for k in range(K) if self.initialized[t, k]}
                for t in range(T)
            ],
        }


@dataclass
class SemanticLossResult:
    loss: float
    per_pair_per_class: dict[tuple[int, int, int], float]
    grad_centroids: np.ndarray  # (T, K, d), w.r.t. the batch centroids
    num_pairs: int
    no_overlap: bool = False


def batch_centroids(features: np.ndarray, labels, num_classes: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class mean feature rows. Returns (centroids (K, d), present mask, counts)."""
    features = np.asarray(features)
    labels = np.asarray(labels, dtype=np.int64)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ShapeError(f"features {features.shape} and labels {labels.shape} disagree")
    onehot = np.zeros((num_classes, labels.size))
    onehot[labels, np.arange(labels.size)] = 1.0
    counts = onehot.sum(axis=1)
    sums = onehot @ features
    present = counts > 0
    cents = np.zeros_like(sums)
    cents[present] = sums[present] / counts[present, None]
    return cents, present, counts


def _effective(bank: CentroidBank, cents: np.ndarray, present: np.ndarray):
    """Post-update centroids, participation mask, and d(effective)/d(batch) scale."""
    g = bank.gamma
    init = bank.initialized
    scale = np.where(present, np.where(init, 1.0 - g, 1.0), 0.0)
    eff = np.where(
        present[..., None],
        np.where(init[..., None], g * bank.centroids + (1.0 - g) * cents, cents),
        bank.centroids,
    )
    return eff, init | present, scale


def update_bank(bank: CentroidBank, task: int, cents: np.ndarray, present: np.ndarray) -> CentroidBank:
    """Absorb one task's batch centroids in place (and return the bank)."""
    if cents.shape != bank.centroids.shape[1:]:
        raise ShapeError(f"centroid block {cents.shape} does not match bank {bank.centroids.shape[1:]}")
    g = bank.gamma
    present = np.asarray(present, dtype=bool)
    blend = present & bank.initialized[task]
    fresh = present & ~bank.initialized[task]
    row = bank.centroids[task]
    row[blend] = g * row[blend] + (1.0 - g) * cents[blend]
    row[fresh] = cents[fresh]
    bank.initialized[task] |= present
    return bank


def semantic_loss(bank: CentroidBank, cents: np.ndarray, present: np.ndarray) -> SemanticLossResult:
    """Normalised sum of squared centroid distances over task pairs and shared classes.

    ``cents`` is (T, K, d) batch centroids and ``present`` the (T, K) batch mask;
    ``bank`` is the state *before* this batch is absorbed.
    """
    T, K, d = bank.shape
    if cents.shape != (T, K, d) or present.shape != (T, K):
        raise ShapeError("batch centroids do not match the bank layout")
    if T < 2:
        raise ShapeError("semantic matching needs at least two tasks")
    eff, part, scale = _effective(bank, cents, present)

    terms: dict[tuple[int, int, int], float] = {}
    grad_eff = np.zeros_like(eff)
    pairs = 0
    for i in range(T):
        for j in range(i + 1, T):
            shared = np.flatnonzero(part[i] & part[j])
            if shared.size == 0:
                continue
            pairs += 1
            diff = eff[i, shared] - eff[j, shared]
            sq = np.einsum("kd,kd->k", diff, diff)
            for k, v in zip(shared.tolist(), sq.tolist()):
                terms[(i, j, k)] = v
            grad_eff[i, shared] += 2.0 * diff
            grad_eff[j, shared] -= 2.0 * diff

    if pairs == 0:
        warnings.warn("no class is shared by any pair of tasks; semantic loss is zero", RuntimeWarning)
        return SemanticLossResult(0.0, {}, np.zeros_like(cents), 0, no_overlap=True)

    norm = 1.0 / (K * pairs)
    loss = norm * sum(terms.values())
    grad = grad_eff * norm * scale[..., None]
    return SemanticLossResult(loss, terms, grad, pairs)


def semantic_divergence_matrix(bank: CentroidBank, label_dists) -> np.ndarray:
    """E[t, i] = sum_k (p_t(k) + p_i(k)) / 2 * ||C_t^k - C_i^k||^2 over mutually known classes."""
    T, K, _ = bank.shape
    P = np.asarray(label_dists, dtype=np.float64)
    if P.shape != (T, K):
        raise ShapeError(f"label distributions {P.shape} do not match bank ({T}, {K})")
    E = np.zeros((T, T))
    for t in range(T):
        for i in range(t + 1, T):
            both = bank.initialized[t] & bank.initialized[i]
            diff = bank.centroids[t, both] - bank.centroids[i, both]
            w = 0.5 * (P[t, both] + P[i, both])
            E[t, i] = E[i, t] = float(np.dot(w, np.einsum("kd,kd->k", diff, diff)))
    return E


def features_grad(grad_centroids: np.ndarray, labels, counts: np.ndarray) -> np.ndarray:
    """Chain a (K, d) centroid gradient back to the batch feature rows of one task."""
    labels = np.asarray(labels, dtype=np.int64)
    safe = np.where(counts > 0, counts, 1.0)
    return grad_centroids[labels] / safe[labels, None]
