"""Metric contracts: worked examples, invariances, and exact agreement with
independent brute-force oracles over random instances."""
import numpy as np
import pytest

from sqlsem.metrics import NoPositives, SingleClass, auprc, auroc, eval_report, f1


# --- independent oracles ------------------------------------------------------

def pairwise_auroc(scores, labels):
    """P(random positive outranks random negative), ties half credit."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def rank_enumeration_ap(scores, labels):
    """Average precision over descending scores, original index breaks ties."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if labels[idx] == 1:
            hits += 1
            total += hits / rank
    return total / sum(labels)


def _random_instance(rng):
    while True:
        n = int(rng.integers(2, 11))
        labels = rng.integers(0, 2, size=n).tolist()
        if 0 < sum(labels) < n:
            break
    if rng.random() < 0.5:
        scores = rng.random(n).tolist()  # continuous, ties unlikely
    else:
        scores = rng.integers(0, 4, size=n).astype(float).tolist()  # tie-heavy
    return scores, labels


# --- worked examples ----------------------------------------------------------

def test_auroc_worked_example():
    assert auroc([0.8, 0.6, 0.4], [1, 0, 1]) == 0.5


def test_auprc_worked_example():
    assert auprc([0.9, 0.8, 0.1], [0, 1, 1]) == (0.5 + 2.0 / 3.0) / 2.0
    assert auprc([0.9, 0.8, 0.1], [0, 1, 1]) == pytest.approx(0.5833, abs=5e-5)


def test_perfect_and_inverted_rankings():
    assert auroc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auroc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0
    assert auprc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_constant_scores_are_chance():
    assert auroc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5


# --- oracle equivalence -------------------------------------------------------

def test_oracle_equivalence_on_random_instances():
    rng = np.random.default_rng(20250814)
    for _ in range(1000):
        scores, labels = _random_instance(rng)
        assert auroc(scores, labels) == pairwise_auroc(scores, labels)
        assert auprc(scores, labels) == rank_enumeration_ap(scores, labels)


def test_auroc_invariant_under_strictly_increasing_transform():
    rng = np.random.default_rng(7)
    for _ in range(100):
        scores, labels = _random_instance(rng)
        base = auroc(scores, labels)
        assert auroc([3.0 * s + 1.0 for s in scores], labels) == base
        assert auroc([s ** 3 for s in scores], labels) == base


# --- thresholded F1 -----------------------------------------------------------

def test_f1_hand_confusion_matrix():
    scores = [0.9, 0.8, 0.3, 0.1]
    labels = [1, 0, 1, 0]
    assert f1(scores, labels, 0.5) == 0.5  # tp=1 fp=1 fn=1
    assert f1(scores, labels, 0.0) == pytest.approx(2 * 2 / (2 * 2 + 2 + 0))
    assert f1(scores, labels, 0.95) == 0.0  # nothing predicted positive


def test_f1_threshold_is_inclusive():
    assert f1([0.5], [1], 0.5) == 1.0


def test_f1_degenerate_zero():
    assert f1([0.1, 0.2], [0, 0], 0.9) == 0.0


# --- error paths ----------------------------------------------------------------

def test_single_class_errors():
    with pytest.raises(SingleClass):
        auroc([0.1, 0.9], [1, 1])
    with pytest.raises(SingleClass):
        auroc([0.1, 0.9], [0, 0])
    with pytest.raises(NoPositives):
        auprc([0.1, 0.9], [0, 0])


@pytest.mark.parametrize("scores,labels", [
    ([], []),
    ([0.5], [1, 0]),
    ([float("nan"), 0.2], [1, 0]),
    ([0.5, 0.2], [1, 2]),
])
def test_invalid_inputs(scores, labels):
    with pytest.raises(ValueError):
        auroc(scores, labels)


# --- report shape ----------------------------------------------------------------

def test_eval_report_shape():
    report = eval_report([0.9, 0.8, 0.1], [1, 0, 1], 0.5)
    assert set(report) == {"auroc", "auprc", "f1_at_threshold", "threshold",
                           "n", "n_pos"}
    assert report["n"] == 3 and report["n_pos"] == 2
    assert report["threshold"] == 0.5
    assert report["auroc"] == auroc([0.9, 0.8, 0.1], [1, 0, 1])
    assert report["f1_at_threshold"] == f1([0.9, 0.8, 0.1], [1, 0, 1], 0.5)
