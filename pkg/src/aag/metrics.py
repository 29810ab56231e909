"""Top-k accuracy and class-mean Top-5 recall.

Everything is rank-based on the logits; ties break toward the lower
class index via a stable sort, so results are deterministic. k larger
than the class count clamps with a warning instead of failing, which
keeps "top-5" meaningful on tiny synthetic label spaces.
"""

import csv
import io
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError
from .fileio import atomic_write_text


@dataclass
class MetricsReport:
    top1: float
    top5: float
    class_mean_top5_recall: float
    per_class_recall: dict
    n_samples: int
    n_classes_present: int


def _as_logits_array(logits):
    data = getattr(logits, "data", logits)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise UsageError(f"logits must be 2-D (batch x classes), got shape {arr.shape}")
    return arr


def _check_labels(labels, b, c):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise UsageError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"labels outside [0, {c})")
    return labels


def _clamp_k(k, c):
    if k > c:
        warnings.warn(f"top-{k} clamped to {c} available classes", stacklevel=3)
        return c
    return k


def _topk_hits(arr, labels, k):
    """Boolean hit per sample; ties go to the lower class index."""
    order = np.argsort(-arr, axis=1, kind="stable")
    return (order[:, :k] == labels[:, None]).any(axis=1)


def top_k_accuracy(logits, labels, k):
    arr = _as_logits_array(logits)
    b, c = arr.shape
    if b == 0:
        raise UsageError("top_k_accuracy: empty batch")
    if k < 1:
        raise UsageError(f"top_k_accuracy: k must be >= 1, got {k}")
    labels = _check_labels(labels, b, c)
    k = _clamp_k(k, c)
    return float(_topk_hits(arr, labels, k).mean())


def class_mean_top5_recall(logits, labels):
    """Unweighted mean of per-class top-5 recall over classes present."""
    arr = _as_logits_array(logits)
    b, c = arr.shape
    if b == 0:
        raise UsageError("class_mean_top5_recall: empty batch")
    labels = _check_labels(labels, b, c)
    hits = _topk_hits(arr, labels, min(5, c))
    per_class = {}
    for cls in np.unique(labels):
        mask = labels == cls
        per_class[int(cls)] = float(hits[mask].sum()) / float(mask.sum())
    # plain sequential sum in ascending class order, so the value is
    # reproducible by any independent implementation without ulp drift
    mean = sum(per_class[cls] for cls in sorted(per_class)) / len(per_class)
    return mean, per_class


def evaluate_logits(logits, labels, k_top=5):
    """Assemble the full report from one batch of logits."""
    arr = _as_logits_array(logits)
    mean_recall, per_class = class_mean_top5_recall(arr, labels)
    return MetricsReport(
        top1=top_k_accuracy(arr, labels, 1),
        top5=top_k_accuracy(arr, labels, k_top),
        class_mean_top5_recall=mean_recall,
        per_class_recall=per_class,
        n_samples=arr.shape[0],
        n_classes_present=len(per_class),
    )


def report_to_dict(report):
    return {
        "top1": report.top1,
        "top5": report.top5,
        "class_mean_top5_recall": report.class_mean_top5_recall,
        "per_class_recall": {
            str(k): report.per_class_recall[k] for k in sorted(report.per_class_recall)
        },
        "n_samples": report.n_samples,
        "n_classes_present": report.n_classes_present,
    }


def emit_report(report, fmt, path):
    """Write the report as json or csv with a fixed field order."""
    if fmt == "json":
        atomic_write_text(path, json.dumps(report_to_dict(report), indent=2) + "\n")
    elif fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerow(["top1", repr(report.top1)])
        writer.writerow(["top5", repr(report.top5)])
        writer.writerow(["class_mean_top5_recall", repr(report.class_mean_top5_recall)])
        for cls in sorted(report.per_class_recall):
            writer.writerow([f"recall_class_{cls}", repr(report.per_class_recall[cls])])
        atomic_write_text(path, buf.getvalue())
    else:
        raise UsageError(f"report format must be json or csv, got {fmt!r}")
