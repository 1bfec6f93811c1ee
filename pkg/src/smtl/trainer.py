"""Joint training of a shared extractor and per-task heads.

Modes: ``vanilla`` (uniform average of plain cross-entropy), ``weighted``
(fixed task-relation weights), ``smtl`` (class re-weighting, semantic centroid
matching and per-epoch task-relation updates, each switchable off).
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import semantic as sem
from .data import TaskDataset, batch_iterator
from .divergence import DivergenceReport, distribution_from_counts
from .errors import ConfigError, TrainingDivergedError, ValidationError
from .nn import DenseNetwork, OptimizerState, Tensor, optimizer_step
from .reweight import compute_beta, segment_reweighted_losses, total_classification_loss
from .task_relation import AlphaObjectiveInputs, uniform_alpha, update_alpha

MODES = ("vanilla", "weighted", "smtl")
ABLATIONS = ("no_reweight", "no_semantic", "no_alpha_opt")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.95
    lr_decay_every: int = 5
    weight_decay: float = 0.0
    gamma: float = 0.7
    lambda_s: float = 1.0
    lambda_e: float = 1.0
    reg: float = 1.0
    alpha_steps: int = 200
    alpha_step_size: float = 0.1
    mode: str = "smtl"
    ablations: tuple[str, ...] = ()
    seed: int = 0
    hidden: tuple[int, ...] = (32,)
    feature_dim: int = 16
    head_hidden: tuple[int, ...] = ()
    activation: str = "relu"
    dtype: str = "float64"

    def __post_init__(self):
        self.ablations = tuple(sorted(set(self.ablations)))
        self.hidden = tuple(self.hidden)
        self.head_hidden = tuple(self.head_hidden)
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        bad = [a for a in self.ablations if a not in ABLATIONS]
        if bad:
            raise ConfigError(f"unknown ablations {bad}; allowed {ABLATIONS}")
        if self.lambda_s < 0 or self.lambda_e < 0 or self.reg < 0:
            raise ConfigError("lambda_s, lambda_e and reg must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1 or self.lr_decay_every < 1:
            raise ConfigError("invalid learning-rate schedule")
        if not 0 <= self.gamma <= 1:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")

    # Effective switches after mode/ablation resolution; vanilla and weighted ignore SMTL flags.
    @property
    def use_reweight(self) -> bool:
        return self.mode == "smtl" and "no_reweight" not in self.ablations

    @property
    def effective_lambda_s(self) -> float:
        if self.mode != "smtl" or "no_semantic" in self.ablations:
            return 0.0
        return self.lambda_s

    @property
    def use_alpha_opt(self) -> bool:
        return self.mode == "smtl" and "no_alpha_opt" not in self.ablations

    @property
    def tracks_centroids(self) -> bool:
        return self.mode == "smtl"

    def variant(self) -> str:
        return self.mode if not self.ablations or self.mode != "smtl" else f"{self.mode}[{'+'.join(self.ablations)}]"

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("ablations", "hidden", "head_hidden"):
            d[k] = list(d[k])
        return d


@dataclass
class MultiTaskModel:
    extractor: DenseNetwork
    heads: list[DenseNetwork]

    def __post_init__(self):
        for h in self.heads:
            if h.input_dim != self.extractor.output_dim:
                raise ValidationError("head input must equal extractor output")
        if len({h.output_dim for h in self.heads}) != 1:
            raise ValidationError("all heads must share the class count")

    @classmethod
    def build(cls, input_dim: int, num_classes: int, num_tasks: int, cfg: TrainConfig) -> "MultiTaskModel":
        rng = np.random.default_rng([cfg.seed, 7])
        dtype = np.dtype(cfg.dtype)
        ext_sizes = [input_dim, *cfg.hidden, cfg.feature_dim]
        extractor = DenseNetwork.build(ext_sizes, [cfg.activation] * (len(ext_sizes) - 1), rng, dtype)
        head_sizes = [cfg.feature_dim, *cfg.head_hidden, num_classes]
        acts = [cfg.activation] * len(cfg.head_hidden) + ["softmax-logits"]
        heads = [DenseNetwork.build(head_sizes, acts, rng, dtype) for _ in range(num_tasks)]
        return cls(extractor, heads)

    @property
    def num_tasks(self) -> int:
        return len(self.heads)

    @property
    def num_classes(self) -> int:
        return self.heads[0].output_dim

    @property
    def feature_dim(self) -> int:
        return self.extractor.output_dim

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = self.extractor.named_parameters("extractor.")
        for t, h in enumerate(self.heads):
            out.extend(h.named_parameters(f"head{t}."))
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.extractor.forward(x, cache=False)

    def predict(self, t: int, x: np.ndarray) -> np.ndarray:
        return self.heads[t].forward(self.features(x), cache=False).argmax(axis=1)

    def manifest(self) -> dict:
        return {
            "extractor": self.extractor.architecture(),
            "heads": [h.architecture() for h in self.heads],
            "parameter_order": [n for n, _ in self.named_parameters()],
        }

    def snapshot(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def restore(self, arrays: list[np.ndarray]) -> None:
        for p, a in zip(self.parameters(), arrays):
            p.data[...] = a


@dataclass
class StepResult:
    loss: float
    loss_matrix: np.ndarray  # [t, i]: head t on task i's batch; nan where not evaluated
    semantic: float
    cents: np.ndarray | None
    present: np.ndarray | None

    @property
    def task_losses(self) -> np.ndarray:
        return np.diag(self.loss_matrix).copy()


def objective_and_grad(
    model: MultiTaskModel,
    batches: list[tuple[np.ndarray, np.ndarray]],
    alpha: np.ndarray,
    betas: np.ndarray,
    lambda_s: float,
    bank: sem.CentroidBank | None,
    full_matrix: bool = False,
) -> StepResult:
    """Evaluate ``L_C + lambda_s * L_S`` on one synchronized batch set and accumulate gradients.

    ``L_C = (1/T) sum_t sum_i alpha[t, i] * loss(head t on task i, beta_i)``.
    Pairs with zero weight are skipped unless ``full_matrix`` (the diagonal is
    always evaluated for reporting).  ``bank`` is read, never written.
    """
    T, K = model.num_tasks, model.num_classes
    model.zero_grad()
    bounds = np.cumsum([0, *(len(y) for _, y in batches)])
    feats = model.extractor.forward(np.concatenate([x for x, _ in batches]))
    dfeats = np.zeros_like(feats)
    L = np.full((T, T), np.nan)

    sizes = np.diff(bounds)
    all_labels = np.concatenate([y for _, y in batches])
    for t in range(T):
        if full_matrix or np.all(alpha[t] > 0):
            srcs = np.arange(T)
            f_t, y_t, n_t = feats, all_labels, sizes
        else:
            srcs = np.array([i for i in range(T) if i == t or alpha[t, i] > 0])
            pick = np.concatenate([np.arange(bounds[i], bounds[i + 1]) for i in srcs])
            f_t, y_t, n_t = feats[pick], all_labels[pick], sizes[srcs]
        logits = model.heads[t].forward(f_t)
        L[t, srcs], g = segment_reweighted_losses(logits, y_t, betas[srcs], n_t)
        row_alpha = np.repeat(alpha[t, srcs] / T, n_t)
        back = model.heads[t].backward(g * row_alpha[:, None])
        if len(srcs) == T:
            dfeats += back
        else:
            dfeats[pick] += back
    loss = float(np.mean([total_classification_loss(np.nan_to_num(L[t]), alpha[t]) for t in range(T)]))

    cents = present = None
    sem_value = 0.0
    if bank is not None:
        cents = np.zeros((T, K, feats.shape[1]))
        present = np.zeros((T, K), dtype=bool)
        counts = []
        for t, (_, y) in enumerate(batches):
            c, m, n = sem.batch_centroids(feats[bounds[t] : bounds[t + 1]], y, K)
            cents[t], present[t] = c, m
            counts.append(n)
        if lambda_s > 0 and T > 1:
            res = sem.semantic_loss(bank, cents, present)
            sem_value = res.loss
            loss += lambda_s * res.loss
            for t, (_, y) in enumerate(batches):
                dfeats[bounds[t] : bounds[t + 1]] += lambda_s * sem.features_grad(res.grad_centroids[t], y, counts[t])
    model.extractor.backward(dfeats)
    return StepResult(loss, L, sem_value, cents, present)


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: list[float]
    test_accuracy: list[float]
    semantic_loss: float
    alpha: list[list[float]]
    label_js: list[list[float]]
    epoch_seconds: float
    lr: float

    def __post_init__(self):
        if any(not 0.0 <= a <= 1.0 for a in self.test_accuracy):
            raise ValidationError("accuracies must lie in [0, 1]")
        if not self.epoch_seconds > 0:
            raise ValidationError(f"epoch wall time must be positive, got {self.epoch_seconds}")


@dataclass
class TrainState:
    """Everything ``fit`` carries between epochs."""

    model: MultiTaskModel
    optimizer: OptimizerState
    alpha: np.ndarray
    betas: np.ndarray
    bank: sem.CentroidBank | None
    label_dists: np.ndarray
    history: list[MetricsRecord] = field(default_factory=list)
    alpha_trajectory: list[np.ndarray] = field(default_factory=list)
    E: np.ndarray | None = None
    last_good: list[np.ndarray] | None = None
    last_good_epoch: int = -1


def resolve_betas(train: list[TaskDataset], cfg: TrainConfig) -> np.ndarray:
    if cfg.use_reweight:
        return np.stack([compute_beta(d.class_counts) for d in train])
    return np.ones((len(train), train[0].num_classes))


def init_state(model: MultiTaskModel, train: list[TaskDataset], cfg: TrainConfig, alpha=None, betas=None) -> TrainState:
    T, K = model.num_tasks, model.num_classes
    if len(train) != T:
        raise ValidationError(f"model has {T} heads but {len(train)} tasks were given")
    if alpha is None:
        alpha = np.eye(T) if cfg.mode == "vanilla" else uniform_alpha(T)
    alpha = np.array(alpha, dtype=np.float64)
    betas = resolve_betas(train, cfg) if betas is None else np.array(betas, dtype=np.float64)
    bank = sem.CentroidBank.empty(T, K, model.feature_dim, cfg.gamma) if cfg.tracks_centroids else None
    opt = OptimizerState(
        lr=cfg.lr, decay_factor=cfg.lr_decay, decay_interval=cfg.lr_decay_every, weight_decay=cfg.weight_decay
    )
    dists = np.stack([distribution_from_counts(d.class_counts) for d in train])
    return TrainState(model, opt, alpha, betas, bank, dists, alpha_trajectory=[alpha.copy()])


def train_epoch(state: TrainState, train: list[TaskDataset], cfg: TrainConfig, epoch: int) -> tuple[np.ndarray, float]:
    """One pass of synchronized mini-batches.

    Returns the epoch-mean loss matrix (head t on task i; nan where never
    evaluated) and the epoch-mean semantic loss.
    """
    model = state.model
    named = model.named_parameters()
    params = [p for _, p in named]
    names = [n for n, _ in named]
    decay_mask = [n.endswith(".weight") for n in names]
    lambda_s = cfg.effective_lambda_s
    T = model.num_tasks
    loss_sum = np.zeros((T, T))
    sem_sum = 0.0
    steps = 0
    for batches in batch_iterator(train, cfg.batch_size, cfg.seed, epoch):
        res = objective_and_grad(
            model, batches, state.alpha, state.betas, lambda_s, state.bank, full_matrix=cfg.use_alpha_opt
        )
        if not np.isfinite(res.loss):
            raise TrainingDivergedError(
                f"loss became {res.loss} at epoch {epoch}, step {steps}; "
                f"last good parameters are from epoch {state.last_good_epoch}"
            )
        try:
            optimizer_step(state.optimizer, params, names=names, decay_mask=decay_mask)
        except FloatingPointError as exc:
            raise TrainingDivergedError(
                f"{exc} at epoch {epoch}; last good parameters are from epoch {state.last_good_epoch}"
            ) from exc
        if state.bank is not None:
            for t in range(T):
                sem.update_bank(state.bank, t, res.cents[t], res.present[t])
        loss_sum += res.loss_matrix
        sem_sum += res.semantic
        steps += 1
    state.optimizer.end_epoch()
    return loss_sum / steps, sem_sum / steps


def refresh_alpha(state: TrainState, loss_matrix: np.ndarray, cfg: TrainConfig) -> None:
    """Re-solve the task-relation rows from epoch-mean losses and the current bank."""
    state.E = sem.semantic_divergence_matrix(state.bank, state.label_dists)
    inputs = AlphaObjectiveInputs(loss_matrix, state.E, reg=cfg.reg, lambda_E=cfg.lambda_e)
    state.alpha = update_alpha(state.alpha, inputs, cfg.alpha_steps, cfg.alpha_step_size)


def evaluate(model: MultiTaskModel, test: list[TaskDataset]) -> np.ndarray:
    """Argmax accuracy of each task head on its own held-out data."""
    if len(test) != model.num_tasks:
        raise ValidationError("need one test set per task")
    accs = []
    for t, ds in enumerate(test):
        if len(ds) == 0:
            raise ValidationError(f"test set for task {t} is empty")
        accs.append(float(np.mean(model.predict(t, ds.features) == ds.labels)))
    return np.array(accs)


def fit(
    model: MultiTaskModel,
    train: list[TaskDataset],
    cfg: TrainConfig,
    test: list[TaskDataset] | None = None,
    alpha=None,
    betas=None,
) -> TrainState:
    """Run ``cfg.epochs`` epochs; the task-relation matrix is refreshed after each (smtl only)."""
    cfg.validate()
    state = init_state(model, train, cfg, alpha, betas)
    label_js = DivergenceReport.from_distributions(list(state.label_dists)).label_js.tolist()
    for epoch in range(cfg.epochs):
        state.last_good = model.snapshot()
        state.last_good_epoch = epoch - 1
        lr = state.optimizer.current_lr
        start = time.perf_counter()
        loss_matrix, sem_value = train_epoch(state, train, cfg, epoch)
        if cfg.use_alpha_opt:
            refresh_alpha(state, loss_matrix, cfg)
        elapsed = time.perf_counter() - start
        if cfg.tracks_centroids and not cfg.use_alpha_opt:
            state.E = sem.semantic_divergence_matrix(state.bank, state.label_dists)
        accs = evaluate(model, test).tolist() if test is not None else []
        state.alpha_trajectory.append(state.alpha.copy())
        state.history.append(
            MetricsRecord(epoch, np.diag(loss_matrix).tolist(), accs, sem_value, state.alpha.tolist(), label_js, elapsed, lr)
        )
    return state
