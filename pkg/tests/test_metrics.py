"""Metrics against brute-force oracles.

The oracle ranks candidates per sample by (-logit, class index) with a
plain sort and scans for the label; recall aggregates the same hits by
class with sequential Python arithmetic. Production must match exactly,
not approximately.
"""

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aag.errors import DataError, UsageError
from aag.metrics import (
    MetricsReport,
    class_mean_top5_recall,
    emit_report,
    evaluate_logits,
    report_to_dict,
    top_k_accuracy,
)

# --- oracles -------------------------------------------------------------------


def brute_top_k(logits, labels, k):
    hits = 0
    for row, lab in zip(logits, labels):
        ranked = sorted(range(len(row)), key=lambda c: (-row[c], c))
        hits += lab in ranked[: min(k, len(row))]
    return hits / len(labels)


def brute_class_mean_recall(logits, labels):
    k = min(5, len(logits[0]))
    per = {}
    for cls in sorted(set(labels)):
        idx = [i for i, lab in enumerate(labels) if lab == cls]
        hit = 0
        for i in idx:
            ranked = sorted(range(len(logits[i])), key=lambda c: (-logits[i][c], c))
            hit += labels[i] in ranked[:k]
        per[cls] = hit / len(idx)
    total = 0.0
    for cls in sorted(per):
        total += per[cls]
    return total / len(per), per


# --- directed cases ------------------------------------------------------------


def test_top1_simple_hit():
    assert top_k_accuracy(np.array([[0.1, 0.5, 0.4]]), [1], 1) == 1.0
    assert top_k_accuracy(np.array([[0.1, 0.5, 0.4]]), [2], 1) == 0.0


def test_tie_breaks_to_lowest_class_index():
    logits = np.zeros((1, 4))
    assert top_k_accuracy(logits, [0], 1) == 1.0
    assert top_k_accuracy(logits, [1], 1) == 0.0
    assert top_k_accuracy(logits, [1], 2) == 1.0


def test_k_clamped_with_warning():
    logits = np.array([[0.3, 0.7], [0.9, 0.1]])
    with pytest.warns(UserWarning, match="clamped"):
        assert top_k_accuracy(logits, [0, 1], 5) == 1.0


def test_hand_enumerated_class_mean_recall():
    # class 0: two samples, both top-5 hits; class 1: one sample, miss.
    # Needs more than 5 classes so a miss is possible at all.
    c = 7
    hit_row = np.zeros(c)
    hit_row[0] = 1.0
    miss_row = np.zeros(c)
    miss_row[1] = -1.0  # label 1 ranks last; top-5 = {0, 2, 3, 4, 5}
    logits = np.stack([hit_row, hit_row, miss_row])
    mean, per = class_mean_top5_recall(logits, [0, 0, 1])
    assert per == {0: 1.0, 1: 0.0}
    assert mean == 0.5


def test_balanced_recall_equals_top5_accuracy():
    rng = np.random.default_rng(40)
    c = 8
    labels = np.repeat(np.arange(c), 3)
    logits = rng.normal(size=(len(labels), c))
    mean, _ = class_mean_top5_recall(logits, labels)
    # macro == micro only when every class has equal support; with equal
    # counts both reduce to the same hit fractions averaged equally
    top5 = top_k_accuracy(logits, labels, 5)
    assert mean == pytest.approx(top5, abs=1e-12)


def test_single_class_eval_set():
    logits = np.array([[1.0, 0.0], [0.0, 1.0]])
    mean, per = class_mean_top5_recall(logits, [0, 0])
    assert per == {0: 1.0}
    assert mean == 1.0


def test_monotone_in_k():
    rng = np.random.default_rng(41)
    logits = rng.normal(size=(30, 9))
    labels = rng.integers(0, 9, size=30)
    accs = [top_k_accuracy(logits, labels, k) for k in range(1, 10)]
    assert all(a <= b for a, b in zip(accs, accs[1:]))
    assert accs[-1] == 1.0


def test_errors():
    with pytest.raises(UsageError):
        top_k_accuracy(np.zeros((0, 3)), [], 1)
    with pytest.raises(UsageError):
        top_k_accuracy(np.zeros((2, 3)), [0, 1], 0)
    with pytest.raises(DataError):
        top_k_accuracy(np.zeros((2, 3)), [0, 5], 1)
    with pytest.raises(UsageError):
        class_mean_top5_recall(np.zeros((0, 3)), [])


# --- oracle sweeps --------------------------------------------------------------


def test_thousand_random_instances_match_oracles_exactly():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        b = int(rng.integers(1, 51))
        c = int(rng.integers(2, 21))
        # integer-ish logits provoke plenty of ties
        logits = rng.integers(-3, 4, size=(b, c)).astype(np.float64)
        labels = rng.integers(0, c, size=b)
        k = int(rng.integers(1, 8))
        expected = brute_top_k(logits.tolist(), labels.tolist(), k)
        if k > c:
            with pytest.warns(UserWarning):
                got = top_k_accuracy(logits, labels, k)
        else:
            got = top_k_accuracy(logits, labels, k)
        assert got == expected
        want_mean, want_per = brute_class_mean_recall(logits.tolist(), labels.tolist())
        got_mean, got_per = class_mean_top5_recall(logits, labels)
        assert got_per == want_per
        assert got_mean == want_mean


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_and_scale_invariance(seed):
    rng = np.random.default_rng(seed)
    b, c = 12, 7
    logits = rng.normal(size=(b, c))
    labels = rng.integers(0, c, size=b)
    base = evaluate_logits(logits, labels)
    perm = rng.permutation(b)
    shuffled = evaluate_logits(logits[perm], labels[perm])
    assert shuffled == base
    scaled = evaluate_logits(logits * 3.5 + 1.25, labels)
    assert scaled == base


# --- report emission -------------------------------------------------------------


def test_json_report_round_trip(tmp_path):
    rng = np.random.default_rng(43)
    logits = rng.normal(size=(20, 6))
    labels = rng.integers(0, 6, size=20)
    report = evaluate_logits(logits, labels)
    path = tmp_path / "report.json"
    emit_report(report, "json", path)
    loaded = json.loads(path.read_text())
    assert loaded["top1"] == report.top1
    assert loaded["top5"] == report.top5
    assert loaded["class_mean_top5_recall"] == report.class_mean_top5_recall
    assert loaded["n_samples"] == 20
    assert {int(k): v for k, v in loaded["per_class_recall"].items()} == (
        report.per_class_recall
    )


def test_csv_report_shape_and_values(tmp_path):
    report = MetricsReport(
        top1=0.25, top5=0.75, class_mean_top5_recall=0.5,
        per_class_recall={0: 1.0, 3: 0.0}, n_samples=4, n_classes_present=2,
    )
    path = tmp_path / "report.csv"
    emit_report(report, "csv", path)
    rows = list(csv.reader(path.read_text().splitlines()))
    assert rows[0] == ["metric", "value"]
    assert len(rows) == 4 + report.n_classes_present
    as_map = dict(rows[1:])
    assert float(as_map["top1"]) == 0.25
    assert float(as_map["recall_class_3"]) == 0.0
    with pytest.raises(UsageError):
        emit_report(report, "yaml", tmp_path / "nope")


def test_report_dict_field_order():
    with pytest.warns(UserWarning, match="clamped"):
        report = evaluate_logits(np.eye(3), [0, 1, 2])
    keys = list(report_to_dict(report))
    assert keys == ["top1", "top5", "class_mean_top5_recall", "per_class_recall",
                    "n_samples", "n_classes_present"]
