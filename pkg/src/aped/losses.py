"""Training objectives: recognition and accent cross-entropy, the three
error-state evaluation losses (BCE, soft-F1, focal), and their weighted
combinations.

Error-state targets come as (k+1)-long predictions whose position 0 is the
SOS slot; it carries no binary label and is excluded everywhere. Probabilities
are clamped to [1e-12, 1-1e-12] before any log. Batched variants average per
utterance first, then over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor

EVAL_KINDS = ("bce", "f1", "focal")
_EPS = 1e-12
_F1_EPS = 1e-9


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1      # accent auxiliary weight
    beta: float = 0.3       # recognition auxiliary weight
    gamma: float = 0.5      # focal exponent
    eval_kind: str = "focal"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("alpha, beta, gamma must be >= 0")
        if self.eval_kind not in EVAL_KINDS:
            raise ValueError(f"eval_kind must be one of {EVAL_KINDS}")


def _clamp_prob(t: Tensor) -> Tensor:
    return ag.clip(t, _EPS, 1.0 - _EPS)


def _check_probs(probs: Tensor):
    if np.any(probs.data < 0.0) or np.any(probs.data > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")


def _div(a: Tensor, b: Tensor) -> Tensor:
    return ag.mul(a, ag.pow_const(b, -1.0))


def asr_loss(phoneme_logits, labels, mask=None) -> Tensor:
    """Mean over unmasked positions of -log softmax(logits)[label]."""
    logits = as_tensor(phoneme_logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.shape[0] != labels.shape[0]:
        raise ValueError(f"{logits.shape[0]} logit rows vs {labels.shape[0]} labels")
    if mask is None:
        mask = np.ones(labels.shape[0])
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape[0] != labels.shape[0]:
        raise ValueError("mask length must match labels")
    total = float(mask.sum())
    if total <= 0:
        raise ValueError("mask removes every position")
    picked = ag.gather_last(ag.log_softmax(logits, axis=-1), labels)
    return ag.scale(ag.sum_(ag.mul(picked, Tensor(mask))), -1.0 / total)


def asr_loss_batch(phoneme_logits, labels, mask) -> Tensor:
    """(B, L, vocab) logits; per-utterance masked mean, then batch mean."""
    logits = as_tensor(phoneme_logits)
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.float64)
    counts = mask.sum(axis=1)
    if np.any(counts <= 0):
        raise ValueError("every utterance needs at least one unmasked position")
    picked = ag.gather_last(ag.log_softmax(logits, axis=-1), labels)
    per_utt = ag.mul(ag.sum_(ag.mul(picked, Tensor(mask)), axis=1), Tensor(1.0 / counts))
    return ag.scale(ag.mean(per_utt), -1.0)


def accent_loss(accent_logits, accent) -> Tensor:
    """-log softmax(logits)[accent] over the 6 accent classes."""
    logits = as_tensor(accent_logits)
    label = int(getattr(accent, "id", accent))
    n = logits.shape[-1]
    if not 0 <= label < n:
        raise ValueError(f"accent label {label} out of range [0, {n})")
    return ag.scale(ag.log_softmax(logits, axis=-1)[label], -1.0)


def accent_loss_batch(accent_logits, labels) -> Tensor:
    logits = as_tensor(accent_logits)
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= logits.shape[-1]):
        raise ValueError("accent label out of range")
    picked = ag.gather_last(ag.log_softmax(logits, axis=-1), labels)
    return ag.scale(ag.mean(picked), -1.0)


def _split_eval_inputs(error_probs, error_states):
    probs = as_tensor(error_probs)
    states = np.asarray(error_states, dtype=np.float64)
    if probs.shape[0] != states.shape[0] + 1:
        raise ValueError(
            f"need k+1 probabilities for k states, got {probs.shape[0]} and {states.shape[0]}"
        )
    _check_probs(probs)
    return probs[1:], states  # drop the SOS slot


def bce_eval(error_probs, error_states) -> Tensor:
    """Binary cross-entropy over positions 1..k."""
    p, e = _split_eval_inputs(error_probs, error_states)
    p = _clamp_prob(p)
    one_minus = _clamp_prob(1.0 - p)
    terms = ag.mul(ag.log(p), Tensor(e)) + ag.mul(ag.log(one_minus), Tensor(1.0 - e))
    return ag.scale(ag.mean(terms), -1.0)


def soft_f1_eval(error_probs, error_states) -> Tensor:
    """1 - F1 where the confusion counts are sums of probabilities, no threshold."""
    p, e = _split_eval_inputs(error_probs, error_states)
    tr = ag.sum_(ag.mul(p, Tensor(e)))
    fr = ag.sum_(ag.mul(p, Tensor(1.0 - e)))
    fa = ag.sum_(ag.mul(1.0 - p, Tensor(e)))
    f1 = _div(ag.scale(tr, 2.0), ag.scale(tr, 2.0) + fr + fa + _F1_EPS)
    return 1.0 - f1


def focal_eval(error_probs, error_states, gamma: float) -> Tensor:
    """Mean of -(1 - e_t)^gamma * log(e_t), e_t = p for true errors else 1-p."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    p, e = _split_eval_inputs(error_probs, error_states)
    e_t = ag.mul(p, Tensor(e)) + ag.mul(1.0 - p, Tensor(1.0 - e))
    e_t = _clamp_prob(e_t)
    if gamma == 0:
        weighted = ag.log(e_t)
    else:
        weighted = ag.mul(ag.pow_const(1.0 - e_t, gamma), ag.log(e_t))
    return ag.scale(ag.mean(weighted), -1.0)


def eval_loss_batch(error_probs, error_states, mask, kind: str, gamma: float = 0.5) -> Tensor:
    """Batched evaluation loss over (B, L) arrays; mask marks positions 1..k."""
    if kind not in EVAL_KINDS:
        raise ValueError(f"eval_kind must be one of {EVAL_KINDS}")
    probs = as_tensor(error_probs)
    _check_probs(probs)
    e = np.asarray(error_states, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    counts = m.sum(axis=1)
    if np.any(counts <= 0):
        raise ValueError("every utterance needs at least one evaluated position")
    if kind == "f1":
        tr = ag.sum_(ag.mul(probs, Tensor(e * m)), axis=1)
        fr = ag.sum_(ag.mul(probs, Tensor((1.0 - e) * m)), axis=1)
        fa = ag.sum_(ag.mul(1.0 - probs, Tensor(e * m)), axis=1)
        f1 = _div(ag.scale(tr, 2.0), ag.scale(tr, 2.0) + fr + fa + _F1_EPS)
        return ag.mean(1.0 - f1)
    if kind == "bce":
        p = _clamp_prob(probs)
        terms = ag.mul(ag.log(p), Tensor(e)) + ag.mul(ag.log(_clamp_prob(1.0 - p)), Tensor(1.0 - e))
    else:
        e_t = _clamp_prob(ag.mul(probs, Tensor(e)) + ag.mul(1.0 - probs, Tensor(1.0 - e)))
        if gamma == 0:
            terms = ag.log(e_t)
        else:
            terms = ag.mul(ag.pow_const(1.0 - e_t, gamma), ag.log(e_t))
    per_utt = ag.mul(ag.sum_(ag.mul(terms, Tensor(m)), axis=1), Tensor(1.0 / counts))
    return ag.scale(ag.mean(per_utt), -1.0)


def combined_pretrain_loss(l_asr: Tensor, l_a: Tensor, alpha: float) -> Tensor:
    return l_asr + ag.scale(as_tensor(l_a), float(alpha))


def combined_aped_loss(l_eval: Tensor, l_asr: Tensor, l_a: Tensor,
                       alpha: float, beta: float) -> Tensor:
    return as_tensor(l_eval) + ag.scale(as_tensor(l_asr), float(beta)) + ag.scale(as_tensor(l_a), float(alpha))
