import warnings

import numpy as np
import pytest

from mpsvqc import metrics as MT
from mpsvqc.errors import MetricError


def count_rates(scores, labels, t):
    fa = sum(1 for s, y in zip(scores, labels) if y == 0 and s >= t)
    fr = sum(1 for s, y in zip(scores, labels) if y == 1 and s < t)
    n0 = sum(1 for y in labels if y == 0)
    n1 = len(labels) - n0
    return fa / n0, fr / n1


def count_tpr(scores, labels, t):
    tp = sum(1 for s, y in zip(scores, labels) if y == 1 and s >= t)
    return tp / sum(1 for y in labels if y == 1)


def scan_tpr_at_fpr(scores, labels, target):
    """O(n^2) oracle: try every candidate threshold, keep the smallest meeting the bound."""
    cands = sorted(set(scores)) + [np.inf]
    for t in cands:
        fpr, _ = count_rates(scores, labels, t)
        if fpr <= target:
            return count_tpr(scores, labels, t), fpr
    raise AssertionError


def mann_whitney(scores, labels):
    live = [s for s, y in zip(scores, labels) if y == 1]
    spoof = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum((a > b) + 0.5 * (a == b) for a in live for b in spoof)
    return wins / (len(live) * len(spoof))


def test_rates_examples():
    s = MT.ScoredSet([1.0, 1.0, 0.0, 0.0], [1, 1, 0, 0])
    assert MT.rates_at_threshold(s, 0.5) == (0.0, 0.0, 0.0)
    labels = np.array([0] * 1000 + [1] * 1000)
    scores = np.zeros(2000)
    scores[:2] = 0.9  # two accepted attacks
    scores[1000:] = 0.9
    scores[1000:1004] = 0.1  # four rejected bona fide
    apcer, bpcer, acer = MT.rates_at_threshold(MT.ScoredSet(scores, labels), 0.5)
    assert (apcer, bpcer) == (0.002, 0.004) and acer == pytest.approx(0.003, abs=1e-15)
    tie = MT.ScoredSet([0.5, 0.5], [1, 0])
    assert MT.rates_at_threshold(tie, 0.5)[:2] == (1.0, 0.0)


def test_rates_match_counting_oracle():
    rng = np.random.default_rng(0)
    scores = np.round(rng.uniform(size=10_000), 3)
    labels = rng.integers(0, 2, 10_000)
    s = MT.ScoredSet(scores, labels)
    for t in (0.0, 0.25, 0.5, 0.731, 1.0):
        apcer, bpcer, acer = MT.rates_at_threshold(s, t)
        assert (apcer, bpcer) == count_rates(scores, labels, t)
        assert acer == (apcer + bpcer) / 2


def test_rates_monotone_in_threshold():
    rng = np.random.default_rng(1)
    s = MT.ScoredSet(rng.uniform(size=300), rng.integers(0, 2, 300))
    prev = None
    for t in np.linspace(0, 1, 41):
        a, b, _ = MT.rates_at_threshold(s, t)
        if prev:
            assert a <= prev[0] and b >= prev[1]
        prev = (a, b)


def test_single_class_errors():
    s = MT.ScoredSet([0.2, 0.7], [1, 1])
    for fn in (MT.rates_at_threshold, MT.tpr_at_fpr, MT.roc):
        with pytest.raises(MetricError):
            fn(s)


def test_tpr_at_fpr_examples():
    s = MT.ScoredSet([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    with pytest.warns(UserWarning):
        assert MT.tpr_at_fpr(s, 1e-3)[0] == 1.0
    flat = MT.ScoredSet(np.full(10, 0.4), [0, 1] * 5)
    tpr, achieved, t = MT.tpr_at_fpr(flat, 0.5)
    assert tpr == 0.0 and achieved == 0.0 and t > 0.4


def test_tpr_at_fpr_matches_scan():
    rng = np.random.default_rng(2)
    n = 10_000
    labels = rng.integers(0, 2, n)
    scores = np.round(np.clip(rng.normal(0.4 + 0.2 * labels, 0.15), 0, 1), 4)
    tpr, achieved, _ = MT.tpr_at_fpr(MT.ScoredSet(scores, labels), 0.01)
    # the scan oracle is quadratic; restrict it to the few hundred candidates near the answer
    spoof = np.sort(scores[labels == 0])
    k = int(np.floor(0.01 * spoof.size))
    lo = spoof[max(0, spoof.size - k - 50)]
    sub = sorted(set(scores[scores >= lo])) + [np.inf]
    for t in sub:
        fpr, _ = count_rates(scores, labels, t)
        if fpr <= 0.01:
            assert (tpr, achieved) == (count_tpr(scores, labels, t), fpr)
            break
    assert achieved <= 0.01


def test_tpr_at_fpr_scan_small():
    rng = np.random.default_rng(3)
    for _ in range(20):
        labels = rng.integers(0, 2, 60)
        labels[:2] = [0, 1]
        scores = list(np.round(rng.uniform(size=60), 2))
        for target in (0.0, 0.05, 0.3):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                tpr, achieved, _ = MT.tpr_at_fpr(MT.ScoredSet(scores, labels), target)
            assert (tpr, achieved) == scan_tpr_at_fpr(scores, labels, target)


def test_roc_and_auc():
    perfect = MT.ScoredSet([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0])
    pts = MT.roc(perfect)
    assert (0.0, 1.0) in [(p[0], p[1]) for p in pts]
    assert MT.auc(pts) == 1.0
    inverted = MT.ScoredSet([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0])
    pts = MT.roc(inverted)
    assert (1.0, 0.0) in [(p[0], p[1]) for p in pts]
    assert MT.auc(pts) == 0.0
    rng = np.random.default_rng(4)
    for _ in range(5):
        labels = rng.integers(0, 2, 400)
        scores = np.round(rng.uniform(size=400), 2)
        pts = MT.roc(MT.ScoredSet(scores, labels))
        assert pts[0][:2] == (0.0, 0.0) and pts[-1][:2] == (1.0, 1.0)
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        assert xs == sorted(xs) and ys == sorted(ys)
        assert abs(MT.auc(pts) - mann_whitney(scores, labels)) <= 1e-12


def test_evaluate_schema():
    rep = MT.evaluate([0.9, 0.2, 0.6, 0.4], [1, 0, 1, 0])
    js = rep.to_json()
    assert set(js) == {"threshold", "apcer", "bpcer", "acer", "tpr_at_fpr", "auc", "n_live",
                       "n_spoof"}
    assert set(js["tpr_at_fpr"]) == {"target", "value", "achieved_fpr", "threshold"}
    assert rep.acer == (rep.apcer + rep.bpcer) / 2
