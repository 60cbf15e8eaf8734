"""Losses and label-weight updates.

Every loss takes softmax probabilities (rows of an (n, C) matrix) and a
boolean candidate mask, and returns the batch-mean value together with
the gradient with respect to the *logits* that produced ``probs``. The
gradients are already divided by the batch size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantError

EPS = 1e-12


@dataclass(frozen=True)
class PseudoLabel:
    index: int
    label: int
    confidence: float


def _check_candidates(candidates) -> np.ndarray:
    mask = np.asarray(candidates, dtype=bool)
    if mask.ndim != 2:
        raise InvariantError("candidate mask must be 2-D")
    if not mask.any(axis=1).all():
        raise InvariantError("empty candidate set")
    return mask


def _softmax_backward(probs: np.ndarray, dloss_dprobs: np.ndarray) -> np.ndarray:
    # dL/dz_j = p_j * (dL/dp_j - sum_k p_k dL/dp_k)
    inner = (probs * dloss_dprobs).sum(axis=1, keepdims=True)
    return probs * (dloss_dprobs - inner)


def _weighted_ce(probs: np.ndarray, weights: np.ndarray):
    logp = np.log(np.maximum(probs, EPS))
    per = -(weights * logp).sum(axis=1)
    n = len(probs)
    grad = (probs * weights.sum(axis=1, keepdims=True) - weights) / n
    return float(per.mean()) if n else 0.0, per, grad


def uniform_weights(candidates) -> np.ndarray:
    mask = _check_candidates(candidates)
    return mask / mask.sum(axis=1, keepdims=True)


def cce_loss(probs, candidates):
    """Candidate-averaged cross entropy: mean over j in s_i of -log p_j.

    Returns ``(mean, per_sample, grad_logits)``.
    """
    return _weighted_ce(np.asarray(probs, dtype=np.float64), uniform_weights(candidates))


def mae_loss(probs, candidates):
    """Candidate-averaged L1 distance to the one-hot vectors, 2(1 - p_j) each.

    Bounded in [0, 2]. Returns ``(mean, per_sample, grad_logits)``.
    """
    p = np.asarray(probs, dtype=np.float64)
    mask = _check_candidates(candidates)
    size = mask.sum(axis=1, keepdims=True)
    per = 2.0 * (1.0 - (p * mask).sum(axis=1) / size[:, 0])
    n = len(p)
    grad = _softmax_backward(p, -2.0 * mask / size) / n
    return float(per.mean()) if n else 0.0, per, grad


def check_weights(weights, candidates, tol: float = 1e-9) -> None:
    w = np.asarray(weights)
    mask = _check_candidates(candidates)
    if w.shape != mask.shape:
        raise InvariantError(f"weight shape {w.shape} != candidate shape {mask.shape}")
    if np.any(w[~mask] != 0):
        raise InvariantError("nonzero weight on a non-candidate class")
    if np.any(w < 0) or np.any(w > 1 + tol):
        raise InvariantError("weights outside [0, 1]")
    if np.any(np.abs(w.sum(axis=1) - 1) > tol):
        raise InvariantError("weight rows do not sum to 1")


def weighted_cce(probs, candidates, weights):
    """Confidence-weighted CE: mean_i sum_{j in s_i} w_ij * (-log p_j). Returns ``(mean, grad_logits)``."""
    w = np.asarray(weights, dtype=np.float64)
    check_weights(w, candidates)
    mean, _, grad = _weighted_ce(np.asarray(probs, dtype=np.float64), w)
    return mean, grad


def _normalize_on_candidates(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    s = np.where(mask, np.maximum(scores, EPS), 0.0)
    return s / s.sum(axis=1, keepdims=True)


def update_weights(probs, candidates) -> np.ndarray:
    """w_ij = p_j / sum_{k in s_i} p_k on candidates, 0 elsewhere."""
    mask = _check_candidates(candidates)
    return _normalize_on_candidates(np.asarray(probs, dtype=np.float64), mask)


def update_weights_augmented(probs_per_view, candidates) -> np.ndarray:
    """Like :func:`update_weights` but on the geometric mean over augmented views."""
    views = [np.asarray(p, dtype=np.float64) for p in probs_per_view]
    if not views:
        raise InvariantError("need at least one view")
    if len(views) == 1:
        return update_weights(views[0], candidates)
    mask = _check_candidates(candidates)
    mean_log = np.mean([np.log(np.maximum(p, EPS)) for p in views], axis=0)
    # shift by the per-row candidate max so exp() cannot underflow to all zeros
    shift = np.where(mask, mean_log, -np.inf).max(axis=1, keepdims=True)
    return _normalize_on_candidates(np.exp(mean_log - shift), mask)


def sup_noncandidate_loss(probs, candidates):
    """Mean over the batch of -sum_{k not in s} log(1 - p_k). Returns ``(mean, grad_logits)``."""
    p = np.asarray(probs, dtype=np.float64)
    non = ~_check_candidates(candidates)
    q = np.maximum(1.0 - p, EPS)
    per = -(np.log(q) * non).sum(axis=1)
    n = len(p)
    grad = _softmax_backward(p, non / q) / n
    return float(per.mean()) if n else 0.0, grad


def kl_consistency(weights, probs_per_view):
    """sum over views of KL(w || p_view), batch mean, with 0 log 0 = 0.

    Returns ``(mean, [grad_logits per view])``.
    """
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    wlogw = np.where(w > 0, w * np.log(np.maximum(w, EPS)), 0.0).sum(axis=1)
    n = len(w)
    per = np.zeros(n)
    grads = []
    wsum = w.sum(axis=1, keepdims=True)
    for p in probs_per_view:
        p = np.atleast_2d(np.asarray(p, dtype=np.float64))
        per += wlogw - (w * np.log(np.maximum(p, EPS))).sum(axis=1)
        grads.append((p * wsum - w) / n)
    return float(per.mean()) if n else 0.0, grads


def pi_schedule(t: int, T_prime: int, pi_max: float) -> float:
    if T_prime < 1:
        raise InvariantError("T_prime must be >= 1")
    return min(t * pi_max / T_prime, pi_max)


def pseudo_label(probs_row, tau: float, index: int = 0) -> PseudoLabel | None:
    p = np.asarray(probs_row, dtype=np.float64)
    j = int(np.argmax(p))
    if p[j] >= tau:
        return PseudoLabel(index, j, float(p[j]))
    return None


def pseudo_labels(probs, tau: float):
    """Vectorised :func:`pseudo_label`: ``(passing_mask, argmax_labels, confidence)``."""
    p = np.asarray(probs, dtype=np.float64)
    labels = p.argmax(axis=1)
    conf = p[np.arange(len(p)), labels]
    return conf >= tau, labels, conf


def unreliable_loss(weak_probs, strong_probs, tau: float):
    """Thresholded pseudo-label CE on the strong view.

    The weak view only supplies hard targets (no gradient). The mean is over
    the whole batch, passing or not. Returns ``(mean, grad_strong_logits)``.
    """
    pw = np.asarray(weak_probs, dtype=np.float64)
    ps = np.asarray(strong_probs, dtype=np.float64)
    if pw.shape != ps.shape:
        raise InvariantError("weak and strong probabilities differ in shape")
    n = len(ps)
    if n == 0:
        return 0.0, np.zeros_like(ps)
    passing, target, _ = pseudo_labels(pw, tau)
    rows = np.arange(n)
    per = np.where(passing, -np.log(np.maximum(ps[rows, target], EPS)), 0.0)
    onehot = np.zeros_like(ps)
    onehot[rows, target] = 1.0
    grad = (ps - onehot) * passing[:, None] / n
    return float(per.mean()), grad


def total_augmented_loss(sup: float, psi: float, pi_t: float, unreliable: float, xi: float) -> float:
    """(L_sup + pi(t) * psi) + xi * L_u."""
    pll = sup + pi_t * psi
    return pll + xi * unreliable
