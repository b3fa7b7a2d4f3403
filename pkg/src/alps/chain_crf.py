"""Exact inference and losses for linear-chain CRFs.

Scores factorize into per-position emissions, a shared transition matrix and
start/end vectors.  All computations run in log space; constraints are applied
by adding ``-inf`` to the scores of disallowed labels, which is absorbing under
``max`` and log-sum-exp, so constrained quantities fall out of the same
forward-backward recursions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintError

NEG_INF = -np.inf


def logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(sum(exp(a))) along ``axis``, tolerating all ``-inf`` slices."""
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


@dataclass(frozen=True)
class ChainScores:
    """Score tables for one sentence: emissions [n, L], transitions [L, L],
    start/end vectors [L]."""

    emissions: np.ndarray
    transitions: np.ndarray
    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "emissions", np.asarray(self.emissions, dtype=np.float64))
        object.__setattr__(self, "transitions", np.asarray(self.transitions, dtype=np.float64))
        object.__setattr__(self, "start", np.asarray(self.start, dtype=np.float64))
        object.__setattr__(self, "end", np.asarray(self.end, dtype=np.float64))
        n, num_labels = self.emissions.shape
        if n < 1:
            raise ValueError("need at least one position")
        if self.transitions.shape != (num_labels, num_labels):
            raise ValueError("transition shape mismatch")
        if self.start.shape != (num_labels,) or self.end.shape != (num_labels,):
            raise ValueError("start/end shape mismatch")

    @property
    def n(self) -> int:
        return self.emissions.shape[0]

    @property
    def num_labels(self) -> int:
        return self.emissions.shape[1]


@dataclass(frozen=True)
class ChainMarginals:
    """Unary [n, L] and pairwise [(n-1), L, L] marginal probabilities."""

    unary: np.ndarray
    pairwise: np.ndarray


@dataclass(frozen=True)
class ConstraintMask:
    """Per-position boolean vector of allowed labels."""

    allowed: np.ndarray

    def __post_init__(self):
        allowed = np.asarray(self.allowed, dtype=bool)
        object.__setattr__(self, "allowed", allowed)
        if not allowed.any(axis=1).all():
            bad = int(np.flatnonzero(~allowed.any(axis=1))[0])
            raise ConstraintError(f"position {bad} has no allowed label")

    @classmethod
    def unconstrained(cls, n: int, num_labels: int) -> "ConstraintMask":
        return cls(np.ones((n, num_labels), dtype=bool))

    def fix(self, position: int, label: int) -> "ConstraintMask":
        allowed = self.allowed.copy()
        allowed[position, :] = False
        allowed[position, label] = True
        return ConstraintMask(allowed)

    def is_singleton(self, position: int) -> bool:
        return int(self.allowed[position].sum()) == 1


@dataclass(frozen=True)
class ChainGrad:
    """Gradient of a loss w.r.t. each ChainScores table."""

    emissions: np.ndarray
    transitions: np.ndarray
    start: np.ndarray
    end: np.ndarray


def _apply_mask(scores: ChainScores, mask: ConstraintMask | None) -> ChainScores:
    if mask is None:
        return scores
    if mask.allowed.shape != scores.emissions.shape:
        raise ValueError("mask shape mismatch")
    emissions = np.where(mask.allowed, scores.emissions, NEG_INF)
    return ChainScores(emissions, scores.transitions, scores.start, scores.end)


def _shifted_exp_transitions(transitions: np.ndarray) -> tuple[np.ndarray, float]:
    shift = float(transitions.max())
    if not np.isfinite(shift):
        shift = 0.0
    return np.exp(transitions - shift), shift


def _forward(scores: ChainScores) -> np.ndarray:
    # The max-shifted recursion alpha[i] = em[i] + log(exp(alpha[i-1]) @ exp(T))
    # keeps every intermediate in [0, L], so neither factor can overflow.
    n, num_labels = scores.emissions.shape
    alpha = np.empty((n, num_labels))
    alpha[0] = scores.start + scores.emissions[0]
    if n == 1:
        return alpha
    exp_t, t_shift = _shifted_exp_transitions(scores.transitions)
    with np.errstate(divide="ignore"):
        for i in range(1, n):
            prev = alpha[i - 1]
            m = prev.max()
            if not np.isfinite(m):
                m = 0.0
            alpha[i] = scores.emissions[i] + np.log(np.exp(prev - m) @ exp_t) + (m + t_shift)
    return alpha


def _backward(scores: ChainScores) -> np.ndarray:
    n, num_labels = scores.emissions.shape
    beta = np.empty((n, num_labels))
    beta[n - 1] = scores.end
    if n == 1:
        return beta
    exp_t, t_shift = _shifted_exp_transitions(scores.transitions)
    with np.errstate(divide="ignore"):
        for i in range(n - 2, -1, -1):
            nxt = scores.emissions[i + 1] + beta[i + 1]
            m = nxt.max()
            if not np.isfinite(m):
                m = 0.0
            beta[i] = np.log(exp_t @ np.exp(nxt - m)) + (m + t_shift)
    return beta


def log_partition(scores: ChainScores, mask: ConstraintMask | None = None) -> float:
    """Log of the sum of exp-scores over all (mask-consistent) label sequences."""
    masked = _apply_mask(scores, mask)
    alpha = _forward(masked)
    return float(logsumexp(alpha[-1] + masked.end, axis=0))


def _posteriors(masked: ChainScores) -> tuple[np.ndarray, np.ndarray, float]:
    alpha = _forward(masked)
    beta = _backward(masked)
    log_z = float(logsumexp(alpha[-1] + masked.end, axis=0))
    return alpha, beta, log_z


def _marginals_from(
    masked: ChainScores, alpha: np.ndarray, beta: np.ndarray, log_z: float
) -> ChainMarginals:
    if not np.isfinite(log_z):
        raise ConstraintError("constraints admit no label sequence")
    n = masked.n
    unary = np.exp(alpha + beta - log_z)
    if n == 1:
        pairwise = np.zeros((0, masked.num_labels, masked.num_labels))
    else:
        log_pair = (
            alpha[:-1, :, None]
            + masked.transitions[None, :, :]
            + (masked.emissions[1:] + beta[1:])[:, None, :]
            - log_z
        )
        pairwise = np.exp(log_pair)
    return ChainMarginals(unary, pairwise)


def marginals(scores: ChainScores, mask: ConstraintMask | None = None) -> ChainMarginals:
    """Exact unary and pairwise marginals under the (masked) distribution."""
    masked = _apply_mask(scores, mask)
    return _marginals_from(masked, *_posteriors(masked))


def sequence_score(scores: ChainScores, labels: np.ndarray) -> float:
    """Raw score of one label sequence."""
    labels = np.asarray(labels, dtype=int)
    total = scores.start[labels[0]] + scores.end[labels[-1]]
    total += scores.emissions[np.arange(scores.n), labels].sum()
    if scores.n > 1:
        total += scores.transitions[labels[:-1], labels[1:]].sum()
    return float(total)


def _indicator_grad(scores: ChainScores, labels: np.ndarray) -> ChainGrad:
    n, num_labels = scores.emissions.shape
    emissions = np.zeros((n, num_labels))
    emissions[np.arange(n), labels] = 1.0
    transitions = np.zeros((num_labels, num_labels))
    if n > 1:
        np.add.at(transitions, (labels[:-1], labels[1:]), 1.0)
    start = np.zeros(num_labels)
    start[labels[0]] = 1.0
    end = np.zeros(num_labels)
    end[labels[-1]] = 1.0
    return ChainGrad(emissions, transitions, start, end)


def _marginal_grad(marg: ChainMarginals) -> ChainGrad:
    return ChainGrad(
        emissions=marg.unary.copy(),
        transitions=marg.pairwise.sum(axis=0)
        if marg.pairwise.shape[0]
        else np.zeros((marg.unary.shape[1],) * 2),
        start=marg.unary[0].copy(),
        end=marg.unary[-1].copy(),
    )


def _grad_diff(a: ChainGrad, b: ChainGrad) -> ChainGrad:
    return ChainGrad(
        a.emissions - b.emissions,
        a.transitions - b.transitions,
        a.start - b.start,
        a.end - b.end,
    )


def nll_full(scores: ChainScores, gold: np.ndarray) -> tuple[float, ChainGrad]:
    """Negative log-likelihood of the gold sequence, with its score gradient.

    The gradient w.r.t. every score table is (marginal - gold indicator).
    """
    gold = np.asarray(gold, dtype=int)
    alpha, beta, log_z = _posteriors(scores)
    loss = -sequence_score(scores, gold) + log_z
    marg = _marginals_from(scores, alpha, beta, log_z)
    grad = _grad_diff(_marginal_grad(marg), _indicator_grad(scores, gold))
    return float(loss), grad


def nll_partial(scores: ChainScores, mask: ConstraintMask) -> tuple[float, ChainGrad]:
    """Marginalized negative log-likelihood over all mask-consistent sequences.

    Equals logZ - logZ_constrained; the gradient is the difference between
    unconstrained and constrained marginals.
    """
    masked = _apply_mask(scores, mask)
    alpha, beta, log_z = _posteriors(scores)
    alpha_c, beta_c, log_z_c = _posteriors(masked)
    if not np.isfinite(log_z_c):
        raise ConstraintError("constraints admit no label sequence")
    grad = _grad_diff(
        _marginal_grad(_marginals_from(scores, alpha, beta, log_z)),
        _marginal_grad(_marginals_from(masked, alpha_c, beta_c, log_z_c)),
    )
    return float(log_z - log_z_c), grad


def kd_loss(teacher: ChainMarginals, scores: ChainScores) -> tuple[float, ChainGrad]:
    """Cross-entropy from a frozen teacher distribution to the scored one.

    Expected score under the teacher decomposes over the teacher's unary and
    pairwise marginals, so the loss is -sum_f s(f) mu'(f) + logZ and the
    gradient is (student marginals - teacher marginals).
    """
    if teacher.unary.shape != scores.emissions.shape:
        raise ValueError("teacher/student dimension mismatch")
    t = _marginal_grad(teacher)
    # 0 * -inf must contribute 0: a masked score never carries teacher mass.
    expected = 0.0
    for s, mu in (
        (scores.emissions, t.emissions),
        (scores.transitions, t.transitions),
        (scores.start, t.start),
        (scores.end, t.end),
    ):
        support = mu != 0.0
        expected += float((np.asarray(s)[support] * mu[support]).sum())
    alpha, beta, log_z = _posteriors(scores)
    loss = -expected + log_z
    grad = _grad_diff(_marginal_grad(_marginals_from(scores, alpha, beta, log_z)), t)
    return float(loss), grad


def viterbi(scores: ChainScores, mask: ConstraintMask | None = None) -> np.ndarray:
    """Highest-scoring label sequence honoring the mask; ties break toward the
    lowest label index."""
    masked = _apply_mask(scores, mask)
    n, num_labels = masked.emissions.shape
    delta = masked.start + masked.emissions[0]
    back = np.zeros((n, num_labels), dtype=int)
    for i in range(1, n):
        cand = delta[:, None] + masked.transitions
        back[i] = np.argmax(cand, axis=0)
        delta = cand[back[i], np.arange(num_labels)] + masked.emissions[i]
    delta = delta + masked.end
    best = int(np.argmax(delta))
    if not np.isfinite(delta[best]):
        raise ConstraintError("constraints admit no label sequence")
    labels = np.empty(n, dtype=int)
    labels[n - 1] = best
    for i in range(n - 1, 0, -1):
        labels[i - 1] = back[i, labels[i]]
    return labels


def token_margins(marg: ChainMarginals) -> np.ndarray:
    """Per-position difference between the two largest label marginals."""
    unary = marg.unary
    if unary.shape[1] == 1:
        return np.ones(unary.shape[0])
    part = np.sort(unary, axis=1)
    return part[:, -1] - part[:, -2]


def token_least_confidence(marg: ChainMarginals) -> np.ndarray:
    """Per-position 1 - p(most likely label)."""
    return 1.0 - marg.unary.max(axis=1)


def token_entropies(marg: ChainMarginals) -> np.ndarray:
    """Per-position entropy of the label marginal."""
    p = marg.unary
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return -terms.sum(axis=1)


def bio_transition_masks(labels: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Additive (-inf/0) masks enforcing BIO validity: I-X may only follow
    B-X or I-X, and never start a sequence.

    Returns (transition mask [L, L], start mask [L]).  Label inventories
    without I- tags get all-zero masks.
    """
    num = len(labels)
    trans = np.zeros((num, num))
    start = np.zeros(num)
    for j, lab in enumerate(labels):
        if not lab.startswith("I-"):
            continue
        kind = lab[2:]
        start[j] = NEG_INF
        for i, prev in enumerate(labels):
            if prev not in (f"B-{kind}", f"I-{kind}"):
                trans[i, j] = NEG_INF
    return trans, start
