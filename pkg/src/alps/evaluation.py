"""Task metrics: span F1 for tagging, attachment scores for parsing, and the
precision/recall plumbing shared with relation evaluation.

Empty denominators follow the stated convention: precision or recall with
nothing to divide by is 0, and F1 of (0, 0) is 0.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import tag_spans
from .errors import ValidationError


def prf(tp: int, num_pred: int, num_gold: int) -> tuple[float, float, float]:
    precision = tp / num_pred if num_pred else 0.0
    recall = tp / num_gold if num_gold else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return precision, recall, f1


def span_prf(gold_seqs, pred_seqs) -> tuple[float, float, float]:
    """Exact (start, end, type) match over BIO-decoded mention spans."""
    tp = num_pred = num_gold = 0
    for gold, pred in zip(gold_seqs, pred_seqs):
        gold_spans = set(tag_spans(gold))
        pred_spans = set(tag_spans(pred))
        tp += len(gold_spans & pred_spans)
        num_gold += len(gold_spans)
        num_pred += len(pred_spans)
    return prf(tp, num_pred, num_gold)


def token_accuracy(gold_seqs, pred_seqs) -> float:
    correct = total = 0
    for gold, pred in zip(gold_seqs, pred_seqs):
        correct += sum(1 for g, p in zip(gold, pred) if g == p)
        total += len(gold)
    return correct / total if total else 0.0


def attachment_scores(gold_heads, pred_heads, gold_labels=None, pred_labels=None):
    """(UAS, LAS); LAS equals UAS when labels are not supplied."""
    total = unlabeled = labeled = 0
    for i, (gh, ph) in enumerate(zip(gold_heads, pred_heads)):
        for j, (g, p) in enumerate(zip(gh, ph)):
            total += 1
            if g != p:
                continue
            unlabeled += 1
            if gold_labels is None or gold_labels[i][j] == pred_labels[i][j]:
                labeled += 1
    if total == 0:
        return 0.0, 0.0
    return unlabeled / total, labeled / total


@dataclass(frozen=True)
class EvalReport:
    task: str
    metrics: dict

    def __post_init__(self):
        if self.task not in ("tagging", "parsing", "ie"):
            raise ValidationError(f"unknown task {self.task!r}")
        for name, value in self.metrics.items():
            if not 0.0 <= float(value) <= 1.0:
                raise ValidationError(f"metric {name} out of [0, 1]: {value!r}")

    @property
    def primary(self) -> float:
        """The headline number: labeled span F1, LAS, or relation F1."""
        key = {"tagging": "f1", "parsing": "las", "ie": "relation_f1"}[self.task]
        return self.metrics[key]
