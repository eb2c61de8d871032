"""Long-tail and domain-imbalance accuracy breakdown.

Every statistic that groups classes (shot split, balanced vs imbalanced,
dominant domain) is computed from TRAINING counts; accuracies are computed on
test predictions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data_model import compute_stats
from .errors import ContractViolation, InputMismatchError

IMBALANCE_RATIO = 3.0
MANY_SHOT_ABOVE = 100
FEW_SHOT_BELOW = 20

CELLS = ("many", "medium", "few",
         "major_balanced", "major_imbalanced", "major_total",
         "minor_balanced", "minor_imbalanced", "minor_total",
         "all")


def shot_split(train_counts):
    """many (> 100), medium (20..100 inclusive) or few (< 20) per class.

    ``train_counts`` is either per-class totals or the C x 2 domain table.
    """
    counts = np.asarray(train_counts)
    if counts.ndim == 2:
        counts = counts.sum(axis=1)
    out = {}
    for c, n in enumerate(counts):
        if n > MANY_SHOT_ABOVE:
            out[c] = "many"
        elif n >= FEW_SHOT_BELOW:
            out[c] = "medium"
        else:
            out[c] = "few"
    return out


def imbalanced_classes(train_counts, threshold=IMBALANCE_RATIO):
    """Classes whose max/min domain count ratio is at least ``threshold``."""
    counts = np.asarray(train_counts)
    if (counts.min(axis=1) < 1).any():
        raise ContractViolation("every class needs at least one training sample per domain")
    # integer comparison avoids float trouble right at the boundary
    return {c for c, row in enumerate(counts) if row.max() >= threshold * row.min()}


def label_major_minor(sample, stats):
    """"major" if the sample's domain is a dominant domain of its class (ties count)."""
    domain = sample["domain"] if isinstance(sample, dict) else sample.domain
    label = sample["y_true"] if isinstance(sample, dict) else sample.class_label
    return "major" if stats.is_dominant(label, domain) else "minor"


@dataclass
class EvalReport:
    correct: dict
    total: dict
    meta: dict = field(default_factory=dict)

    def accuracy(self, cell):
        """Percent accuracy, or None for a cell without test samples."""
        if self.total[cell] == 0:
            return None
        return 100.0 * self.correct[cell] / self.total[cell]

    @property
    def accuracies(self):
        return {c: self.accuracy(c) for c in CELLS}

    def to_json(self):
        return {
            "accuracy": self.accuracies,
            "correct": dict(self.correct),
            "total": dict(self.total),
            "meta": self.meta,
        }

    def dumps(self):
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    def table(self, name="model"):
        """Aligned text table with the Many/Medium/Few | Major | Minor | All layout."""
        head1 = f"{'':<12}|{'':^24}|{'Major':^24}|{'Minor':^24}|{'':^7}"
        head2 = (f"{'Method':<12}|{'Many':>7} {'Medium':>8} {'Few':>7}|"
                 f"{'Bal':>7} {'Imbal':>8} {'Total':>7}|"
                 f"{'Bal':>7} {'Imbal':>8} {'Total':>7}|{'All':>7}")

        def f(cell, width):
            a = self.accuracy(cell)
            return f"{'-' if a is None else f'{a:.1f}':>{width}}"

        row = (f"{name:<12}|{f('many', 7)} {f('medium', 8)} {f('few', 7)}|"
               f"{f('major_balanced', 7)} {f('major_imbalanced', 8)} {f('major_total', 7)}|"
               f"{f('minor_balanced', 7)} {f('minor_imbalanced', 8)} {f('minor_total', 7)}|"
               f"{f('all', 7)}")
        rule = "-" * len(head2)
        return "\n".join([head1, head2, rule, row]) + "\n"


def evaluate(predictions, manifest):
    """Fill every accuracy cell from prediction records.

    ``predictions`` are dicts with at least ``sequence_id`` and ``y_pred``;
    several records per sequence (per-frame evaluation) are all counted.
    """
    test = {s.sequence_id: s for s in manifest.split("test")}
    predicted = {p["sequence_id"] for p in predictions}
    missing = sorted(set(test) - predicted)
    if missing:
        raise InputMismatchError(f"no prediction for test sequences: {missing}")
    unknown = sorted(predicted - set(test))
    if unknown:
        raise InputMismatchError(f"predictions for sequences not in the test split: {unknown}")

    counts = manifest.counts
    stats = compute_stats(counts)
    shots = shot_split(counts)
    imbal = imbalanced_classes(counts)
    correct = dict.fromkeys(CELLS, 0)
    total = dict.fromkeys(CELLS, 0)
    for p in predictions:
        s = test[p["sequence_id"]]
        hit = int(int(p["y_pred"]) == s.class_label)
        mm = "major" if stats.is_dominant(s.class_label, s.domain) else "minor"
        cb = "imbalanced" if s.class_label in imbal else "balanced"
        for cell in (shots[s.class_label], f"{mm}_{cb}", f"{mm}_total", "all"):
            correct[cell] += hit
            total[cell] += 1
    meta = {
        "shot_accuracy": "per-sample",
        "num_predictions": len(predictions),
        "num_test_sequences": len(test),
        "imbalanced_classes": sorted(imbal),
        "shot_split": {str(c): v for c, v in shots.items()},
        "dominant_domains": {str(c): sorted(d) for c, d in enumerate(stats.dominant)},
    }
    return EvalReport(correct, total, meta)
