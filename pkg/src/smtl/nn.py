"""Dense network substrate: parameters, layer-wise forward/backward, Adam.

The model family is a static stack of dense layers, so backpropagation is a
fixed reverse pass over cached activations rather than a general tape.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError

ACTIVATIONS = ("relu", "tanh", "identity", "softmax-logits")


@dataclass
class Tensor:
    """A parameter array with an accumulated gradient."""

    data: np.ndarray
    grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g


@dataclass
class Dense:
    weight: Tensor  # (in, out)
    bias: Tensor  # (out,)
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


def _activate(z: np.ndarray, tag: str) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    if tag == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, tag: str, upstream: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return upstream * (z > 0)
    if tag == "tanh":
        return upstream * (1.0 - a * a)
    return upstream


class DenseNetwork:
    """Stack of dense layers with cached activations for one backward pass."""

    def __init__(self, layers: list[Dense]):
        if not layers:
            raise ShapeError("network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")
        for layer in layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
        self.layers = layers
        self._cache: list[tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None

    @classmethod
    def build(
        cls,
        sizes: list[int],
        activations: list[str],
        rng: np.random.Generator,
        dtype=np.float64,
    ) -> "DenseNetwork":
        """Glorot-uniform weights, zero biases. ``sizes`` lists every width incl. input."""
        if len(activations) != len(sizes) - 1:
            raise ShapeError("need one activation per layer")
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
            layers.append(Dense(Tensor(w), Tensor(np.zeros(fan_out, dtype=dtype)), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        out = []
        for i, layer in enumerate(self.layers):
            out.append((f"{prefix}layer{i}.weight", layer.weight))
            out.append((f"{prefix}layer{i}.bias", layer.bias))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"expected input (batch, {self.input_dim}), got {x.shape}")
        records = []
        a = x
        for layer in self.layers:
            z = a @ layer.weight.data + layer.bias.data
            out = _activate(z, layer.activation)
            records.append((a, z, out))
            a = out
        self._cache = records if cache else None
        return a

    def backward(self, loss_grad: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return the gradient w.r.t. the input."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        upstream = np.asarray(loss_grad)
        if upstream.shape != self._cache[-1][2].shape:
            raise ShapeError(f"loss_grad shape {upstream.shape} != output {self._cache[-1][2].shape}")
        for layer, (a_in, z, a_out) in zip(reversed(self.layers), reversed(self._cache)):
            dz = _activation_grad(z, a_out, layer.activation, upstream)
            layer.weight.accumulate(a_in.T @ dz)
            layer.bias.accumulate(dz.sum(axis=0))
            upstream = dz @ layer.weight.data.T
        self._cache = None
        return upstream

    def architecture(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "layers": [
                {"in": l.in_dim, "out": l.out_dim, "activation": l.activation} for l in self.layers
            ],
        }


@dataclass
class OptimizerState:
    """Adam with decoupled weight decay and a step-wise epoch learning-rate schedule."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decay_factor: float = 0.95
    decay_interval: int = 5
    step_count: int = 0
    epoch: int = 0
    moments: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay factor must lie in (0, 1]")
        if self.decay_interval < 1:
            raise ValueError("decay interval must be >= 1")

    @property
    def current_lr(self) -> float:
        return self.lr * self.decay_factor ** (self.epoch // self.decay_interval)

    def end_epoch(self) -> None:
        self.epoch += 1


def optimizer_step(
    state: OptimizerState,
    params: list[Tensor],
    grads: list[np.ndarray] | None = None,
    names: list[str] | None = None,
    decay_mask: list[bool] | None = None,
) -> None:
    """One Adam update in place. ``decay_mask`` selects which params get weight decay."""
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    if len(grads) != len(params):
        raise ShapeError("params and grads are not aligned")
    names = names or [f"param{i}" for i in range(len(params))]
    for name, g in zip(names, grads):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    decay_mask = decay_mask or [p.data.ndim > 1 for p in params]
    state.step_count += 1
    t = state.step_count
    lr = state.current_lr
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        m, v = state.moments.get(i, (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        state.moments[i] = (m, v)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        if decay_mask[i] and state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


# Checkpoint text layout: one header line "<name> <ndim> <dim_0> ... <dim_n>"
# followed by one line of row-major values (repr floats, exact round-trip).

def save_checkpoint(path: str | Path, named: list[tuple[str, Tensor]], manifest: dict) -> None:
    path = Path(path)
    lines = []
    for name, p in named:
        lines.append(" ".join([name, str(p.data.ndim), *map(str, p.data.shape)]))
        lines.append(" ".join(repr(float(v)) for v in p.data.ravel()))
    path.write_text("\n".join(lines) + "\n")
    manifest_path = path.with_suffix(".json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    rows = path.read_text().splitlines()
    arrays = {}
    for header, values in zip(rows[::2], rows[1::2]):
        parts = header.split()
        name, ndim = parts[0], int(parts[1])
        shape = tuple(int(s) for s in parts[2 : 2 + ndim])
        flat = np.array([float(v) for v in values.split()], dtype=np.float64)
        arrays[name] = flat.reshape(shape)
    manifest = json.loads(path.with_suffix(".json").read_text())
    return arrays, manifest
