"""Class-balanced loss re-weighting and the alpha-weighted classification loss."""
from __future__ import annotations

import numpy as np

from .errors import ValidationError

SIMPLEX_TOL = 1e-6


def compute_beta(counts, m: int | None = None) -> np.ndarray:
    """Inverse-frequency class weights with count-weighted mean 1.

    ``beta_k = m / (K_present * counts_k)`` for classes with instances; absent
    classes get weight 0.
    """
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if m is not None and m != total:
        raise ValidationError(f"m={m} does not equal the sum of counts {total}")
    if total <= 0:
        raise ValidationError("task has no instances")
    present = counts > 0
    beta = np.zeros_like(counts)
    beta[present] = total / (present.sum() * counts[present])
    return beta


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample cross-entropy and its gradient w.r.t. the logits (per sample)."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = log_softmax(logits)
    rows = np.arange(len(labels))
    losses = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return losses, grad


def reweighted_loss(logits: np.ndarray, labels, beta) -> tuple[float, np.ndarray]:
    """Batch mean of beta(y) * CE(logits, y); returns (loss, d loss / d logits)."""
    beta = np.asarray(beta, dtype=np.float64)
    losses, grad = segment_reweighted_losses(logits, labels, beta[None, :], [len(logits)])
    return float(losses[0]), grad


def segment_reweighted_losses(logits: np.ndarray, labels, betas: np.ndarray, sizes) -> tuple[np.ndarray, np.ndarray]:
    """Re-weighted mean losses for consecutive row segments of one logit block.

    Segment s covers ``sizes[s]`` rows and is weighted by ``betas[s]``.
    Returns per-segment losses and the per-row gradient of each row's own
    segment loss.
    """
    labels = np.asarray(labels, dtype=np.int64)
    sizes = np.asarray(sizes, dtype=np.int64)
    if logits.shape[0] != labels.shape[0] or sizes.sum() != labels.shape[0]:
        raise ValidationError("logits, labels and segment sizes disagree on batch size")
    seg = np.repeat(np.arange(len(sizes)), sizes)
    w = betas[seg, labels]
    if np.any(w <= 0):
        bad = sorted(set(labels[w <= 0].tolist()))
        raise ValidationError(f"batch contains classes {bad} with zero weight; data pipeline is inconsistent")
    losses, grad = cross_entropy(logits, labels)
    scale = w / sizes[seg]
    seg_losses = np.bincount(seg, weights=scale * losses, minlength=len(sizes))
    return seg_losses, grad * scale[:, None]


def check_simplex(alpha, tol: float = SIMPLEX_TOL) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha < -tol) or abs(alpha.sum() - 1.0) > tol:
        raise ValidationError(f"alpha {alpha.tolist()} is off the simplex")
    return alpha


def total_classification_loss(per_task_losses, alpha_row) -> float:
    """Alpha-weighted sum of per-task losses."""
    alpha_row = check_simplex(alpha_row)
    losses = np.asarray(per_task_losses, dtype=np.float64)
    if losses.shape != alpha_row.shape:
        raise ValidationError("losses and alpha row differ in length")
    return float(np.dot(alpha_row, losses))
