"""Presentation-attack detection metrics: APCER, BPCER, ACER, ROC and TPR at fixed FPR.

Labels: 1 = bona fide (live), 0 = attack (spoof). A sample is predicted live
when its score is >= the threshold.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import MetricError

__all__ = [
    "ScoredSet",
    "MetricsReport",
    "rates_at_threshold",
    "tpr_at_fpr",
    "roc",
    "auc",
    "evaluate",
]


@dataclass(frozen=True)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        y = np.asarray(self.labels).astype(np.int64).ravel()
        if s.shape != y.shape:
            raise MetricError(f"{s.size} scores for {y.size} labels")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    def split(self):
        live = self.scores[self.labels == 1]
        spoof = self.scores[self.labels == 0]
        if live.size == 0 or spoof.size == 0:
            raise MetricError("rate metrics need at least one live and one spoof sample")
        return live, spoof


@dataclass
class MetricsReport:
    threshold: float
    apcer: float
    bpcer: float
    acer: float
    tpr_at_fpr: dict
    auc: float
    n_live: int
    n_spoof: int
    roc: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "apcer": self.apcer,
            "bpcer": self.bpcer,
            "acer": self.acer,
            "tpr_at_fpr": dict(self.tpr_at_fpr),
            "auc": self.auc,
            "n_live": self.n_live,
            "n_spoof": self.n_spoof,
        }


def rates_at_threshold(s: ScoredSet, threshold: float = 0.5):
    live, spoof = s.split()
    apcer = np.count_nonzero(spoof >= threshold) / spoof.size
    bpcer = np.count_nonzero(live < threshold) / live.size
    return float(apcer), float(bpcer), float((apcer + bpcer) / 2)


def tpr_at_fpr(s: ScoredSet, fpr_target: float = 1e-3):
    """TPR at the smallest threshold whose empirical FPR does not exceed the target.

    Step semantics, no interpolation. Returns ``(tpr, achieved_fpr, threshold)``;
    when only rejecting everything meets the bound the threshold sits just above
    the largest score.
    """
    live, spoof = s.split()
    if spoof.size * fpr_target < 1:
        warnings.warn(
            f"{spoof.size} attack samples cannot resolve FPR {fpr_target}", stacklevel=2
        )
    cand = np.unique(s.scores)
    spoof_sorted = np.sort(spoof)
    live_sorted = np.sort(live)
    # counts with score >= t
    fp = spoof.size - np.searchsorted(spoof_sorted, cand, side="left")
    fpr = fp / spoof.size
    ok = np.flatnonzero(fpr <= fpr_target)
    if ok.size:
        t = float(cand[ok[0]])
    else:
        t = float(np.nextafter(cand[-1], np.inf))
    achieved = float(np.count_nonzero(spoof >= t) / spoof.size)
    tpr = float((live.size - np.searchsorted(live_sorted, t, side="left")) / live.size)
    return tpr, achieved, t


def roc(s: ScoredSet):
    """(fpr, tpr, threshold) at every distinct score, from (0, 0) to (1, 1)."""
    live, spoof = s.split()
    cand = np.unique(s.scores)[::-1]
    spoof_sorted, live_sorted = np.sort(spoof), np.sort(live)
    fp = spoof.size - np.searchsorted(spoof_sorted, cand, side="left")
    tp = live.size - np.searchsorted(live_sorted, cand, side="left")
    pts = [(0.0, 0.0, float(np.nextafter(cand[0], np.inf)))]
    pts += [(float(f / spoof.size), float(t / live.size), float(c)) for f, t, c in zip(fp, tp, cand)]
    return pts


def auc(points) -> float:
    pts = sorted((p[0], p[1]) for p in points)
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))


def evaluate(scores, labels, threshold: float = 0.5, fpr_target: float = 1e-3) -> MetricsReport:
    s = ScoredSet(scores, labels)
    apcer, bpcer, acer = rates_at_threshold(s, threshold)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tpr, achieved, thr = tpr_at_fpr(s, fpr_target)
    pts = roc(s)
    live, spoof = s.split()
    return MetricsReport(
        threshold, apcer, bpcer, acer,
        {"target": fpr_target, "value": tpr, "achieved_fpr": achieved, "threshold": thr},
        auc(pts), int(live.size), int(spoof.size), pts,
    )
