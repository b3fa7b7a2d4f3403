"""Error-rate estimation for adaptive partial selection.

A one-dimensional logistic regression maps a sub-structure's marginal-based
margin to its probability of being confidently correct; one minus the mean
predicted correctness over a query set gives the selection ratio.  Degenerate
single-class fits fall back to a constant model (weight 0, bias at the logit
of the clamped empirical rate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain_crf import marginals, token_margins
from .errors import ValidationError
from .learner import FeatureCache, ParameterStore, score
from .tree_crf import head_margins, mt_arc_marginals

LOG_EPSILON = 1e-6
CONFIDENT_MARGIN = 0.5


@dataclass(frozen=True)
class CorrectnessSample:
    """One sub-structure: its margin and whether the model got it right with
    margin above the confidence threshold."""

    margin: float
    label: bool


@dataclass(frozen=True)
class LogisticModel:
    weight: float
    bias: float

    def __post_init__(self):
        if not (np.isfinite(self.weight) and np.isfinite(self.bias)):
            raise ValidationError("non-finite logistic parameters")

    def predict(self, margins) -> np.ndarray:
        """p(confidently correct) for each margin."""
        x = np.log(np.asarray(margins, dtype=np.float64) + LOG_EPSILON)
        return _sigmoid(self.weight * x + self.bias)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def collect_dev_samples(
    params: ParameterStore,
    dev,
    task: str,
    cache: FeatureCache | None = None,
) -> list[CorrectnessSample]:
    """One sample per token (tagging) or per head decision (parsing), with
    margins from the unconstrained marginals of the current model."""
    dev = list(dev)
    if not dev:
        raise ValidationError("empty dev set")
    samples = []
    for sentence in dev:
        scores = score(params, sentence, cache)
        if task == "tagging":
            marg = marginals(scores)
            gaps = token_margins(marg)
            pred = marg.unary.argmax(axis=1)
            gold = np.array(
                [params.labels.index(t.gold_tag) for t in sentence.tokens], dtype=int
            )
        else:
            marg = mt_arc_marginals(scores)
            gaps = head_margins(marg)
            pred = marg.probabilities.argmax(axis=0)
            gold = np.array([t.gold_head for t in sentence.tokens], dtype=int)
        for i in range(len(sentence)):
            margin = float(gaps[i])
            correct = bool(pred[i] == gold[i])
            samples.append(
                CorrectnessSample(margin, correct and margin > CONFIDENT_MARGIN)
            )
    return samples


def fit_logistic(samples, max_iter: int = 100, tol: float = 1e-10) -> LogisticModel:
    """Deterministic Newton fit of label ~ sigmoid(w * ln(margin + eps) + b).

    With only one class present the MLE diverges, so the fit degenerates to a
    constant model at the clamped empirical rate.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("no correctness samples")
    y = np.array([1.0 if s.label else 0.0 for s in samples])
    if y.min() == y.max():
        rate = min(max(float(y.mean()), LOG_EPSILON), 1.0 - LOG_EPSILON)
        return LogisticModel(0.0, float(np.log(rate / (1.0 - rate))))
    x = np.log(np.array([s.margin for s in samples]) + LOG_EPSILON)
    design = np.stack([x, np.ones_like(x)], axis=1)
    theta = np.zeros(2)
    for _ in range(max_iter):
        p = _sigmoid(design @ theta)
        grad = design.T @ (p - y)
        if np.linalg.norm(grad) < tol:
            break
        weights = p * (1.0 - p)
        hessian = design.T @ (design * weights[:, None]) + 1e-12 * np.eye(2)
        theta = theta - np.linalg.solve(hessian, grad)
    return LogisticModel(float(theta[0]), float(theta[1]))


def adaptive_ratio(
    model: LogisticModel,
    query_margins,
    r_min: float = 0.02,
    r_max: float = 0.98,
) -> float:
    """r = 1 - mean predicted correctness over the query set, clamped.

    Margins are sorted before averaging so the result is exactly invariant
    under reordering of the query set.
    """
    query_margins = np.sort(np.asarray(query_margins, dtype=np.float64))
    if query_margins.size == 0:
        raise ValidationError("empty query set")
    r = 1.0 - float(model.predict(query_margins).mean())
    return min(max(r, r_min), r_max)
