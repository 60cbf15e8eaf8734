"""A small numpy MLP with hand-written backprop and SGD-momentum.

Everything is float64. Models are plain containers of arrays; the only
operations that mutate them are :func:`sgd_step` / :func:`backward_and_step`.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, ShapeError

DEFAULT_HIDDEN = (512, 256, 128, 64)


@dataclass
class MlpModel:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]


@dataclass
class OptimizerState:
    base_lr: float
    momentum: float = 0.9
    weight_decay: float = 1e-3
    total_epochs: int = 1
    current_epoch: int = 0
    buffers: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")

    @property
    def lr(self) -> float:
        return cosine_lr(min(self.current_epoch, self.total_epochs), self.total_epochs, self.base_lr)


def mlp_dims(input_dim: int, n_classes: int, hidden=DEFAULT_HIDDEN) -> list[int]:
    return [int(input_dim), *[int(h) for h in hidden], int(n_classes)]


def init_mlp(layer_dims, seed) -> MlpModel:
    """He-uniform weights, zero biases. Same seed gives a bit-identical model."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ConfigError(f"need at least input and output dims, got {dims}")
    if any(d < 1 for d in dims):
        raise ConfigError(f"all layer dims must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases)


def forward(model: MlpModel, batch, return_cache: bool = False):
    """Affine layers with ReLU between them; the last layer is linear.

    With ``return_cache`` the per-layer inputs and pre-activations are
    returned too, for :func:`gradients`.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ShapeError(f"batch shape {x.shape} does not match input dim {model.layer_dims[0]}")
    inputs, pre = [], []
    h = x
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = z if k == last else np.maximum(z, 0.0)
    if return_cache:
        return h, (inputs, pre)
    return h


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def gradients(model: MlpModel, cache, grad_logits) -> list[np.ndarray]:
    """Parameter gradients for a given dL/dlogits, ordered like ``model.parameters()``."""
    inputs, pre = cache
    g = np.asarray(grad_logits, dtype=np.float64)
    if g.shape != pre[-1].shape:
        raise ShapeError(f"gradient shape {g.shape} != logits shape {pre[-1].shape}")
    n_layers = len(model.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for k in range(n_layers - 1, -1, -1):
        gw[k] = inputs[k].T @ g
        gb[k] = g.sum(axis=0)
        if k > 0:
            g = (g @ model.weights[k].T) * (pre[k - 1] > 0)
    return [*gw, *gb]


def sgd_step(model: MlpModel, opt: OptimizerState, grads, lr: float | None = None) -> MlpModel:
    """In-place SGD with L2 weight decay folded into the gradient, then momentum."""
    params = model.parameters()
    if len(grads) != len(params):
        raise ShapeError("gradient list does not match model parameters")
    if not opt.buffers:
        opt.buffers = [np.zeros_like(p) for p in params]
    lr = opt.lr if lr is None else lr
    for p, g, v in zip(params, grads, opt.buffers):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        d = g + opt.weight_decay * p
        v *= opt.momentum
        v += d
        p -= lr * v
    return model


def backward_and_step(model, opt, batch, grad_logits, cache=None, lr=None) -> MlpModel:
    if cache is None:
        _, cache = forward(model, batch, return_cache=True)
    return sgd_step(model, opt, gradients(model, cache, grad_logits), lr)


def cosine_lr(epoch: int, total: int, base_lr: float) -> float:
    if total < 1 or not 0 <= epoch <= total:
        raise ConfigError(f"need 0 <= epoch <= total and total >= 1, got {epoch}/{total}")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total))


def predict(model: MlpModel, x, batch_size: int = 4096) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index (numpy argmax semantics)."""
    out = [forward(model, x[i:i + batch_size]).argmax(axis=1) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def predict_proba(model: MlpModel, x, batch_size: int = 4096) -> np.ndarray:
    if len(x) == 0:
        return np.zeros((0, model.n_classes))
    return np.concatenate([softmax(forward(model, x[i:i + batch_size]))
                           for i in range(0, len(x), batch_size)])


# Model file: b"UPLM" | u32 version | u32 n_dims | u32 dims[n_dims] | f8 params...
_MAGIC = b"UPLM"
_VERSION = 1


def save_model(model: MlpModel, path) -> None:
    dims = model.layer_dims
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path) -> MlpModel:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise DataFormatError(f"{path}: not a model file")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise DataFormatError(f"{path}: unsupported model version {version}")
    dims = list(struct.unpack_from(f"<{n}I", raw, 12))
    offset = 12 + 4 * n
    shapes = [(a, b) for a, b in zip(dims[:-1], dims[1:])] + [(b,) for b in dims[1:]]
    params = []
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64)
        params.append(arr.reshape(shape))
        offset += 8 * count
    if offset != len(raw):
        raise DataFormatError(f"{path}: trailing or missing bytes")
    k = len(dims) - 1
    return MlpModel(dims, params[:k], params[k:])


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches covering 0..n-1; the last partial batch is kept."""
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]
