"""Threshold filtering, the TA/FR/FA/TR confusion taxonomy, derived rates,
and threshold sweeps.

An error state of 1 means "mispronounced": rejection is predicting 1, so TR
counts caught errors and TA counts accepted correct phonemes. Counts pool
(micro-average) across utterances; rates with a zero denominator come back
as 0.0 with the rate named in the report's degenerate tuple.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_THETA = 0.5
DEFAULT_THETA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 10))


@dataclass(frozen=True)
class ConfusionCounts:
    ta: float
    fr: float
    fa: float
    tr: float

    @property
    def total(self) -> float:
        return self.ta + self.fr + self.fa + self.tr

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.ta + other.ta, self.fr + other.fr,
                               self.fa + other.fa, self.tr + other.tr)


@dataclass(frozen=True)
class MetricsReport:
    theta: float
    precision: float
    recall: float
    f1: float
    accuracy: float
    far: float
    frr: float
    counts: ConfusionCounts
    degenerate: tuple[str, ...] = field(default=())


def binarize(error_probs, theta: float) -> np.ndarray:
    """Hard states: 1 where prob >= theta (boundary counts as a rejection)."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must be in (0, 1), got {theta}")
    probs = np.asarray(error_probs, dtype=np.float64)
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    return (probs >= theta).astype(np.int64)


def confusion(hard_states, error_states) -> ConfusionCounts:
    """TR = sum(e_hat*e), FR = sum(e_hat*(1-e)), FA = sum((1-e_hat)*e),
    TA = sum((1-e_hat)*(1-e))."""
    pred = np.asarray(hard_states, dtype=np.float64)
    e = np.asarray(error_states, dtype=np.float64)
    if pred.shape != e.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {e.shape}")
    tr = float(np.sum(pred * e))
    fr = float(np.sum(pred * (1.0 - e)))
    fa = float(np.sum((1.0 - pred) * e))
    ta = float(np.sum((1.0 - pred) * (1.0 - e)))
    return ConfusionCounts(ta=ta, fr=fr, fa=fa, tr=tr)


def _ratio(num: float, den: float, name: str, degenerate: list[str]) -> float:
    if den <= 0:
        degenerate.append(name)
        return 0.0
    return num / den


def report(counts: ConfusionCounts, theta: float) -> MetricsReport:
    degenerate: list[str] = []
    precision = _ratio(counts.tr, counts.tr + counts.fr, "precision", degenerate)
    recall = _ratio(counts.tr, counts.tr + counts.fa, "recall", degenerate)
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        degenerate.append("f1")
    accuracy = _ratio(counts.ta + counts.tr, counts.total, "accuracy", degenerate)
    far = _ratio(counts.fa, counts.fa + counts.tr, "far", degenerate)
    frr = _ratio(counts.fr, counts.ta + counts.fr, "frr", degenerate)
    return MetricsReport(theta=theta, precision=precision, recall=recall, f1=f1,
                         accuracy=accuracy, far=far, frr=frr, counts=counts,
                         degenerate=tuple(degenerate))


def pooled_report(pairs, theta: float) -> MetricsReport:
    """pairs: iterable of (error_probs, error_states) per utterance."""
    total = ConfusionCounts(0.0, 0.0, 0.0, 0.0)
    n = 0
    for probs, states in pairs:
        total = total + confusion(binarize(probs, theta), states)
        n += 1
    if n == 0:
        raise ValueError("empty dataset")
    return report(total, theta)


def theta_sweep(pairs, thetas=DEFAULT_THETA_GRID) -> list[MetricsReport]:
    """One pooled report per theta over the same prediction set."""
    thetas = list(thetas)
    if not thetas:
        raise ValueError("no thresholds given")
    if any(not 0.0 < t < 1.0 for t in thetas):
        raise ValueError("every theta must be in (0, 1)")
    if any(b <= a for a, b in zip(thetas, thetas[1:])):
        raise ValueError("thetas must be strictly increasing")
    pairs = [(np.asarray(p, dtype=np.float64), np.asarray(e)) for p, e in pairs]
    if not pairs:
        raise ValueError("empty dataset")
    return [pooled_report(pairs, t) for t in thetas]


SWEEP_HEADER = "theta,precision,recall,f1,accuracy,far,frr,ta,fr,fa,tr"


def sweep_csv(reports: list[MetricsReport]) -> str:
    lines = [SWEEP_HEADER]
    for r in reports:
        c = r.counts
        lines.append(
            f"{r.theta:.6g},{r.precision:.12g},{r.recall:.12g},{r.f1:.12g},"
            f"{r.accuracy:.12g},{r.far:.12g},{r.frr:.12g},"
            f"{c.ta:.12g},{c.fr:.12g},{c.fa:.12g},{c.tr:.12g}"
        )
    return "\n".join(lines) + "\n"
