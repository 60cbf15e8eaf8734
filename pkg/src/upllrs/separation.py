"""Self-adaptive recursive separation of a UPLL training set.

Each step trains a freshly initialised MLP for a few epochs with the
candidate-averaged CE loss, drops the highest-loss fraction of the current
reliable subset, and checks validation accuracy. Separation stops after
``patience`` consecutive steps below the best accuracy so far, or at the
step cap.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import LabeledDataset, UpllDataset
from .errors import ConfigError, DataFormatError, InvariantError, NumericalError
from .losses import cce_loss

log = logging.getLogger(__name__)


@dataclass
class SeparationConfig:
    beta: int = 5
    gamma: float = 0.03
    patience: int = 10
    max_steps: int | None = None  # None: derived from gamma
    retain: float = 0.3
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-3
    batch_size: int = 256
    hidden: tuple[int, ...] = nn.DEFAULT_HIDDEN
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ConfigError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.beta < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("beta, patience and batch_size must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def steps(self) -> int:
        return self.max_steps if self.max_steps is not None else max_steps(self.gamma, self.retain)


@dataclass
class SeparationResult:
    reliable_indices: np.ndarray
    unreliable_indices: np.ndarray
    history: list[dict] = field(default_factory=list)
    initial_losses: np.ndarray | None = None
    stop_reason: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "reliable_indices": self.reliable_indices.tolist(),
            "unreliable_indices": self.unreliable_indices.tolist(),
            "history": self.history,
            "initial_losses": None if self.initial_losses is None else self.initial_losses.tolist(),
            "stop_reason": self.stop_reason,
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SeparationResult":
        try:
            d = json.loads(text)
            losses = d.get("initial_losses")
            return cls(
                np.array(d["reliable_indices"], dtype=np.int64),
                np.array(d["unreliable_indices"], dtype=np.int64),
                d["history"],
                None if losses is None else np.array(losses, dtype=np.float64),
                d.get("stop_reason", ""),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise DataFormatError(f"bad separation file: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "SeparationResult":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataFormatError(str(exc)) from exc
        return cls.from_json(text)


def max_steps(gamma: float, retain: float = 0.3) -> int:
    """Largest lambda with (1 - gamma)**lambda >= retain."""
    if not 0 < gamma < 1 or not 0 < retain < 1:
        raise ConfigError(f"need 0 < gamma < 1 and 0 < retain < 1, got {gamma}, {retain}")
    lam = math.floor(math.log(retain) / math.log1p(-gamma))
    # guard the floor against log rounding right at an integer boundary
    while (1 - gamma) ** (lam + 1) >= retain:
        lam += 1
    while lam > 0 and (1 - gamma) ** lam < retain:
        lam -= 1
    return lam


def rank_by_loss(losses) -> np.ndarray:
    """Positions sorted by descending loss; ties keep ascending position."""
    losses = np.asarray(losses, dtype=np.float64)
    if np.isnan(losses).any():
        raise InvariantError("NaN loss cannot be ranked")
    return np.argsort(-losses, kind="stable")


def exclusion_count(size: int, gamma: float) -> int:
    return max(1, math.floor(gamma * size))


def exclude_top_gamma(reliable_indices, ranked, gamma: float):
    """Drop the ``max(1, floor(gamma * size))`` highest-loss members.

    ``ranked`` holds positions into ``reliable_indices``. The survivors keep
    their original order.
    """
    reliable_indices = np.asarray(reliable_indices, dtype=np.int64)
    ranked = np.asarray(ranked, dtype=np.int64)
    if len(ranked) != len(reliable_indices):
        raise InvariantError("ranking does not cover the reliable subset")
    k = exclusion_count(len(reliable_indices), gamma)
    drop = np.zeros(len(reliable_indices), dtype=bool)
    drop[ranked[:k]] = True
    return reliable_indices[~drop], reliable_indices[ranked[:k]]


def train_cce_epochs(model, features, candidates, epochs, cfg: SeparationConfig, rng):
    """Plain CCE training; returns each sample's loss from the last epoch."""
    opt = nn.OptimizerState(cfg.lr, cfg.momentum, cfg.weight_decay, total_epochs=epochs)
    last = np.empty(len(features))
    for epoch in range(epochs):
        opt.current_epoch = epoch
        for idx in nn.minibatches(len(features), cfg.batch_size, rng):
            logits, cache = nn.forward(model, features[idx], return_cache=True)
            _, per, grad = cce_loss(nn.softmax(logits), candidates[idx])
            if not np.isfinite(per).all():
                raise NumericalError(f"non-finite CCE loss in epoch {epoch}")
            if epoch == epochs - 1:
                last[idx] = per
            nn.backward_and_step(model, opt, None, grad, cache=cache)
    return last


def accuracy(model, ds: LabeledDataset) -> float:
    if len(ds) == 0:
        return 0.0
    return float(np.mean(nn.predict(model, ds.features) == ds.labels))


def run_recursive_separation(train: UpllDataset, val: LabeledDataset,
                             config: SeparationConfig) -> SeparationResult:
    n, C = len(train), train.class_count
    dims = nn.mlp_dims(train.features.shape[1], C, config.hidden)
    audited = train.hidden_truth is not None
    flags = train.reliability() if audited else None

    reliable = np.arange(n, dtype=np.int64)
    excluded: list[np.ndarray] = []
    history = [{
        "step": 0, "val_accuracy": None, "reliable_size": n,
        "audited_purity": float(flags.mean()) if audited and n else None,
    }]
    best, waited = 0.0, 0
    stop_reason = "max_steps"
    initial_losses = None

    for step in range(1, config.steps + 1):
        k = exclusion_count(len(reliable), config.gamma)
        if len(reliable) - k < C:
            stop_reason = "min_size"
            log.info("separation halted at step %d: subset would fall below %d samples", step, C)
            break
        model = nn.init_mlp(dims, [config.seed, step, 0])
        rng = np.random.default_rng([config.seed, step, 1])
        losses = train_cce_epochs(model, train.features[reliable], train.candidates[reliable],
                                  config.beta, config, rng)
        if step == 1:
            initial_losses = losses.copy()
        reliable, dropped = exclude_top_gamma(reliable, rank_by_loss(losses), config.gamma)
        excluded.append(dropped)

        acc = accuracy(model, val)
        history.append({
            "step": step, "val_accuracy": acc, "reliable_size": int(len(reliable)),
            "audited_purity": float(flags[reliable].mean()) if audited else None,
        })
        log.debug("step %d: val acc %.4f, reliable %d", step, acc, len(reliable))
        if acc < best:
            waited += 1
            if waited >= config.patience:
                stop_reason = "patience"
                break
        else:
            best, waited = acc, 0

    unreliable = np.sort(np.concatenate(excluded)) if excluded else np.zeros(0, dtype=np.int64)
    return SeparationResult(reliable, unreliable, history, initial_losses, stop_reason)


def config_dict(cfg: SeparationConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
