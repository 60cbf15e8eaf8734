"""Second-stage training on a separated UPLL dataset.

Three trainers share one epoch/early-stopping driver (:func:`_fit`):

* ``general``: confidence-weighted CE on the reliable pool, weights re-estimated
  every epoch, confident unreliable instances promoted with their pseudo-label.
* ``augmented``: non-candidate suppression + ramped KL consistency over noisy
  feature views on the reliable pool, plus thresholded weak/strong pseudo-label
  CE on the unreliable pool.
* ``baseline_cce`` / ``baseline_mae``: single-stage training on everything.

The model returned is the snapshot from the best validation epoch.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses, nn
from .data import LabeledDataset, UpllDataset
from .errors import ConfigError, NumericalError

MODES = ("general", "augmented", "baseline_cce", "baseline_mae")


@dataclass
class TrainConfig:
    mode: str = "general"
    max_epochs: int = 500
    patience: int = 25
    lr: float = 5e-2
    momentum: float = 0.9
    weight_decay: float = 1e-3
    batch_size: int = 256
    tau: float = 0.95
    xi: float = 2.0
    pi_max: float = 1.0
    T_prime: int = 100
    weak_sigma: float = 0.05
    strong_sigma: float = 0.2
    views: int = 2
    hidden: tuple[int, ...] = nn.DEFAULT_HIDDEN
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0 < self.tau <= 1:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.xi < 0:
            raise ConfigError("xi must be >= 0")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs, patience and batch_size must be >= 1")
        if self.views < 1 or self.T_prime < 1:
            raise ConfigError("views and T_prime must be >= 1")
        if self.weak_sigma < 0 or self.strong_sigma < 0:
            raise ConfigError("augmentation sigmas must be >= 0")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class TrainState:
    """Mutable per-run state, handed to the ``on_epoch`` callback after each epoch."""

    model: nn.MlpModel
    features: np.ndarray
    candidates: np.ndarray
    weights: np.ndarray | None
    unreliable_features: np.ndarray
    # positions (into the original unreliable array) still unlabelled / promoted so far
    unreliable_ids: np.ndarray
    promoted_ids: np.ndarray
    epoch: int = 0
    best_val_accuracy: float = -1.0
    last_promotions: int = 0
    last_per_sample: np.ndarray | None = None
    last_promotion_confidence: np.ndarray | None = None


@dataclass
class TrainResult:
    model: nn.MlpModel
    metrics: list[dict]
    summary: dict
    state: TrainState = field(repr=False)

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(self.metrics, out / "metrics.jsonl")
        (out / "summary.json").write_text(json.dumps(self.summary, indent=1) + "\n", encoding="utf-8")
        nn.save_model(self.model, out / "model.bin")


def write_metrics(metrics, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in metrics:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_metrics(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]


def augment(features, sigma: float, seed) -> np.ndarray:
    """Additive isotropic Gaussian noise in standardised feature units; sigma=0 is the identity."""
    x = np.asarray(features, dtype=np.float64)
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    if sigma == 0:
        return x.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return x + sigma * rng.standard_normal(x.shape)


def evaluate(model: nn.MlpModel, dataset: LabeledDataset) -> float:
    if len(dataset) == 0:
        return 0.0
    return float(np.mean(nn.predict(model, dataset.features) == dataset.labels))


def _fit(state: TrainState, run_epoch, val, test, config: TrainConfig, on_epoch=None) -> TrainResult:
    """Shared epoch loop: cosine LR, evaluation, best-val snapshot, patience stop."""
    t0 = time.perf_counter()
    opt = nn.OptimizerState(config.lr, config.momentum, config.weight_decay, total_epochs=config.max_epochs)
    metrics = []
    best_model, best_epoch, best_test, waited = state.model.copy(), 0, 0.0, 0
    for epoch in range(config.max_epochs):
        opt.current_epoch = epoch
        state.epoch = epoch
        lr = opt.lr
        train_loss = run_epoch(epoch, opt)
        if not np.isfinite(train_loss):
            raise NumericalError(f"non-finite training loss at epoch {epoch + 1}")
        val_acc, test_acc = evaluate(state.model, val), evaluate(state.model, test)
        metrics.append({
            "epoch": epoch + 1, "lr": lr, "train_loss": float(train_loss),
            "val_acc": val_acc, "test_acc": test_acc,
            "promotions": state.last_promotions, "reliable_size": int(len(state.features)),
            "unreliable_size": int(len(state.unreliable_ids)),
        })
        if val_acc > state.best_val_accuracy:
            state.best_val_accuracy = val_acc
            best_model, best_epoch, best_test, waited = state.model.copy(), epoch + 1, test_acc, 0
        else:
            waited += 1
        if on_epoch is not None:
            on_epoch(state)
        if waited >= config.patience:
            break
    summary = {
        "mode": config.mode,
        "epochs_run": len(metrics),
        "best_epoch": best_epoch,
        "best_val_acc": state.best_val_accuracy,
        "test_acc_at_best_val": best_test,
        "final_reliable_size": int(len(state.features)),
        "final_unreliable_size": int(len(state.unreliable_ids)),
        "wall_time_seconds": time.perf_counter() - t0,
    }
    return TrainResult(best_model, metrics, summary, state)


def _new_state(reliable: UpllDataset, unreliable_features, config: TrainConfig, weights=True) -> TrainState:
    if len(reliable) == 0:
        raise ConfigError("reliable pool is empty")
    unl = np.asarray(unreliable_features, dtype=np.float64).reshape(-1, reliable.features.shape[1])
    dims = nn.mlp_dims(reliable.features.shape[1], reliable.class_count, config.hidden)
    return TrainState(
        model=nn.init_mlp(dims, [config.seed, 100]),
        features=reliable.features.copy(),
        candidates=reliable.candidates.copy(),
        weights=losses.uniform_weights(reliable.candidates) if weights else None,
        unreliable_features=unl,
        unreliable_ids=np.arange(len(unl), dtype=np.int64),
        promoted_ids=np.zeros(0, dtype=np.int64),
    )


def train_general(reliable: UpllDataset, unreliable_features, val: LabeledDataset, test: LabeledDataset,
                  config: TrainConfig, on_epoch: Callable[[TrainState], None] | None = None) -> TrainResult:
    state = _new_state(reliable, unreliable_features, config)
    rng = np.random.default_rng([config.seed, 101])
    C = reliable.class_count

    def run_epoch(epoch, opt):
        total, count = 0.0, 0
        for idx in nn.minibatches(len(state.features), config.batch_size, rng):
            logits, cache = nn.forward(state.model, state.features[idx], return_cache=True)
            loss, grad = losses.weighted_cce(nn.softmax(logits), state.candidates[idx], state.weights[idx])
            nn.backward_and_step(state.model, opt, None, grad, cache=cache)
            total += loss * len(idx)
            count += len(idx)
        state.weights = losses.update_weights(nn.predict_proba(state.model, state.features), state.candidates)

        state.last_promotions = 0
        state.last_promotion_confidence = None
        if len(state.unreliable_ids):
            probs = nn.predict_proba(state.model, state.unreliable_features[state.unreliable_ids])
            passing, labels, conf = losses.pseudo_labels(probs, config.tau)
            if passing.any():
                moved = state.unreliable_ids[passing]
                onehot = np.zeros((len(moved), C), dtype=bool)
                onehot[np.arange(len(moved)), labels[passing]] = True
                state.features = np.concatenate([state.features, state.unreliable_features[moved]])
                state.candidates = np.concatenate([state.candidates, onehot])
                state.weights = np.concatenate([state.weights, onehot.astype(np.float64)])
                state.unreliable_ids = state.unreliable_ids[~passing]
                state.promoted_ids = np.concatenate([state.promoted_ids, moved])
                state.last_promotions = int(len(moved))
                state.last_promotion_confidence = conf[passing]
        return total / max(count, 1)

    return _fit(state, run_epoch, val, test, config, on_epoch)


def _view_sigmas(config: TrainConfig) -> list[float]:
    # first view weak, the rest strong
    return [config.weak_sigma] + [config.strong_sigma] * (config.views - 1)


def train_augmented(reliable: UpllDataset, unreliable_features, val: LabeledDataset, test: LabeledDataset,
                    config: TrainConfig, on_epoch: Callable[[TrainState], None] | None = None) -> TrainResult:
    state = _new_state(reliable, unreliable_features, config)
    rng = np.random.default_rng([config.seed, 102])
    sigmas = _view_sigmas(config)
    model = state.model

    def run_epoch(epoch, opt):
        pi_t = losses.pi_schedule(epoch, config.T_prime, config.pi_max)
        # with xi == 0 the unreliable term is skipped entirely, rng draws included
        n_u = len(state.unreliable_ids) if config.xi > 0 else 0
        u_order = rng.permutation(state.unreliable_ids) if n_u else state.unreliable_ids
        u_pos = 0
        total, count = 0.0, 0
        for idx in nn.minibatches(len(state.features), config.batch_size, rng):
            x, cand, w = state.features[idx], state.candidates[idx], state.weights[idx]
            logits, cache = nn.forward(model, x, return_cache=True)
            sup, g_sup = losses.sup_noncandidate_loss(nn.softmax(logits), cand)
            grads = nn.gradients(model, cache, g_sup)

            view_out = [nn.forward(model, augment(x, s, rng), return_cache=True) for s in sigmas]
            psi, g_views = losses.kl_consistency(w, [nn.softmax(z) for z, _ in view_out])
            if pi_t > 0:
                for (_, vcache), g in zip(view_out, g_views):
                    for acc, gv in zip(grads, nn.gradients(model, vcache, pi_t * g)):
                        acc += gv

            l_u = 0.0
            if n_u:
                take = np.take(u_order, np.arange(u_pos, u_pos + len(idx)), mode="wrap")
                u_pos += len(idx)
                xu = state.unreliable_features[take]
                weak = nn.softmax(nn.forward(model, augment(xu, config.weak_sigma, rng)))
                zs, scache = nn.forward(model, augment(xu, config.strong_sigma, rng), return_cache=True)
                l_u, g_u = losses.unreliable_loss(weak, nn.softmax(zs), config.tau)
                for acc, gv in zip(grads, nn.gradients(model, scache, config.xi * g_u)):
                    acc += gv

            nn.sgd_step(model, opt, grads)
            total += losses.total_augmented_loss(sup, psi, pi_t, l_u, config.xi) * len(idx)
            count += len(idx)

        views = [nn.predict_proba(model, augment(state.features, s, rng)) for s in sigmas]
        state.weights = losses.update_weights_augmented(views, state.candidates)
        state.last_promotions = 0
        return total / max(count, 1)

    return _fit(state, run_epoch, val, test, config, on_epoch)


def train_baseline(train_full: UpllDataset, val: LabeledDataset, test: LabeledDataset,
                   config: TrainConfig, on_epoch: Callable[[TrainState], None] | None = None) -> TrainResult:
    if config.mode == "baseline_cce":
        loss_fn = losses.cce_loss
    elif config.mode == "baseline_mae":
        loss_fn = losses.mae_loss
    else:
        raise ConfigError(f"train_baseline needs a baseline mode, got {config.mode!r}")
    state = _new_state(train_full, np.zeros((0, train_full.features.shape[1])), config, weights=False)
    rng = np.random.default_rng([config.seed, 103])

    def run_epoch(epoch, opt):
        total, count = 0.0, 0
        per_sample = np.empty(len(state.features))
        for idx in nn.minibatches(len(state.features), config.batch_size, rng):
            logits, cache = nn.forward(state.model, state.features[idx], return_cache=True)
            loss, per, grad = loss_fn(nn.softmax(logits), state.candidates[idx])
            per_sample[idx] = per
            nn.backward_and_step(state.model, opt, None, grad, cache=cache)
            total += loss * len(idx)
            count += len(idx)
        state.last_per_sample = per_sample
        return total / max(count, 1)

    return _fit(state, run_epoch, val, test, config, on_epoch)


def train(mode_config: TrainConfig, reliable: UpllDataset, unreliable_features, val, test,
          on_epoch=None) -> TrainResult:
    """Dispatch on ``mode_config.mode``. Baselines train on ``reliable`` as given."""
    if mode_config.mode == "general":
        return train_general(reliable, unreliable_features, val, test, mode_config, on_epoch)
    if mode_config.mode == "augmented":
        return train_augmented(reliable, unreliable_features, val, test, mode_config, on_epoch)
    return train_baseline(reliable, val, test, mode_config, on_epoch)


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d
