"""Task-relation weights: per-row simplex-constrained convex program.

Row t minimises ``sum_i a_i (loss_i + lambda_E * E[t, i]) + reg * ||a||_2``
over the probability simplex by projected gradient descent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .reweight import check_simplex


def project_to_simplex(v) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum x = 1} (sort-and-threshold).

    A 2-D input is projected row by row.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim not in (1, 2) or v.size == 0:
        raise ValidationError("need a non-empty vector or matrix of rows")
    rows = np.atleast_2d(v)
    n = rows.shape[1]
    u = -np.sort(-rows, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, n + 1)
    cond = u - css / idx > 0
    rho = n - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(rows.shape[0]), rho] / (rho + 1)
    out = np.maximum(rows - theta[:, None], 0.0)
    return out if v.ndim == 2 else out[0]


@dataclass
class AlphaObjectiveInputs:
    """Solver inputs.

    ``task_losses`` is either a (T,) vector shared by every row or a (T, T)
    matrix whose row t holds head t's loss on each task's data.
    """

    task_losses: np.ndarray
    E: np.ndarray  # (T, T)
    reg: float = 1.0
    lambda_E: float = 1.0

    def __post_init__(self):
        self.task_losses = np.asarray(self.task_losses, dtype=np.float64)
        self.E = np.asarray(self.E, dtype=np.float64)
        T = self.task_losses.shape[0]
        if self.task_losses.shape not in ((T,), (T, T)):
            raise ValidationError(f"task_losses has shape {self.task_losses.shape}")
        if self.E.shape != (T, T):
            raise ValidationError(f"E has shape {self.E.shape}, expected ({T}, {T})")
        if not np.all(np.isfinite(self.task_losses)) or np.any(self.task_losses < 0):
            raise ValidationError("task losses must be finite and non-negative")
        if not np.all(np.isfinite(self.E)):
            raise ValidationError("E must be finite")

    @property
    def num_tasks(self) -> int:
        return self.task_losses.shape[0]

    def losses_for(self, t: int) -> np.ndarray:
        return self.task_losses if self.task_losses.ndim == 1 else self.task_losses[t]

    def costs(self, t: int) -> np.ndarray:
        return self.losses_for(t) + self.lambda_E * self.E[t]


def alpha_row_objective(alpha_t, t: int, inputs: AlphaObjectiveInputs) -> float:
    alpha_t = check_simplex(alpha_t)
    return float(np.dot(alpha_t, inputs.costs(t)) + inputs.reg * np.linalg.norm(alpha_t))


def _objectives(A: np.ndarray, C: np.ndarray, reg: float) -> np.ndarray:
    return np.einsum("ti,ti->t", A, C) + reg * np.sqrt(np.einsum("ti,ti->t", A, A))


def _grad(A: np.ndarray, C: np.ndarray, reg: float) -> np.ndarray:
    return C + reg * A / np.sqrt(np.einsum("ti,ti->t", A, A))[:, None]


def _check_finite(values: np.ndarray, rows: list[int]) -> None:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"non-finite alpha objective for rows {rows}: {values.tolist()}")


def solve_alpha_rows(
    rows: list[int],
    inputs: AlphaObjectiveInputs,
    init: np.ndarray,
    steps: int = 200,
    step_size: float = 0.1,
    tol: float = 1e-10,
) -> np.ndarray:
    """Projected gradient descent on several independent rows at once.

    Each iteration proposes ``P(a - eta * grad)`` per row.  A proposal that
    would raise the objective is rejected and that row's step halved; after an
    accepted move the next step is the Barzilai-Borwein ratio ``s.s / s.y``.
    A row stops once its gradient mapping ``|a - P(a - eta * grad)| / eta``
    drops below ``tol``.
    """
    if steps < 1 or step_size <= 0:
        raise ValidationError("steps must be >= 1 and step_size > 0")
    A = project_to_simplex(np.atleast_2d(np.asarray(init, dtype=np.float64)))
    C = np.stack([inputs.costs(t) for t in rows])
    reg = inputs.reg
    f = _objectives(A, C, reg)
    _check_finite(f, rows)
    min_step, max_step = 1e-14, 1e6 * step_size
    eta = np.full(len(rows), float(step_size))
    done = np.zeros(len(rows), dtype=bool)
    grad = _grad(A, C, reg)
    for _ in range(steps):
        cand = project_to_simplex(A - eta[:, None] * grad)
        f_new = _objectives(cand, C, reg)
        _check_finite(f_new, rows)
        accept = (f_new <= f) & ~done
        # Stationarity of A itself, whether or not the proposal is taken.
        done |= np.max(np.abs(cand - A), axis=1) / eta < tol
        g_new = _grad(cand, C, reg)
        s = cand - A
        sy = np.einsum("ti,ti->t", s, g_new - grad)
        ss = np.einsum("ti,ti->t", s, s)
        bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), max_step)
        A[accept] = cand[accept]
        f[accept] = f_new[accept]
        grad[accept] = g_new[accept]
        eta = np.where(accept, np.clip(bb, min_step, max_step), 0.5 * eta)
        # A rejected move within rounding of f means no representable progress is left.
        done |= (~accept & (np.abs(f_new - f) <= 8 * np.finfo(float).eps * np.abs(f))) | (eta <= min_step)
        if done.all():
            break
    return A


def solve_alpha_row(
    t: int,
    inputs: AlphaObjectiveInputs,
    init=None,
    steps: int = 200,
    step_size: float = 0.1,
    tol: float = 1e-10,
) -> np.ndarray:
    """Projected gradient descent on one row; see ``solve_alpha_rows``."""
    T = inputs.num_tasks
    a = np.full(T, 1.0 / T) if init is None else np.asarray(init, dtype=np.float64)
    return solve_alpha_rows([t], inputs, a[None, :], steps, step_size, tol)[0]


def uniform_alpha(num_tasks: int) -> np.ndarray:
    return np.full((num_tasks, num_tasks), 1.0 / num_tasks)


def update_alpha(alpha: np.ndarray, inputs: AlphaObjectiveInputs, steps: int = 200, step_size: float = 0.1) -> np.ndarray:
    """Re-solve every row, warm-started from the current matrix.

    Rows are independent; they are iterated together purely for speed and the
    result equals solving each row on its own.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    return solve_alpha_rows(list(range(alpha.shape[0])), inputs, alpha, steps, step_size)
