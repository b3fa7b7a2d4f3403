"""Exact inference for arc-factored non-projective dependency structures.

The partition function over rooted spanning arborescences and the per-arc
marginals come from the determinant / inverse of the Laplacian minor.  Arc
scores live in a [(n+1) x n] matrix: row = head (0 is ROOT), column = modifier
(1-based token index minus one).  Constraints zero out arcs by setting their
score to -inf before exponentiation; exp-domain overflow is avoided by
shifting each modifier's column, which moves logZ by the shift total and
leaves the tree distribution unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintError, NumericalError, ValidationError

NEG_INF = -np.inf


@dataclass(frozen=True)
class ArcScores:
    """Arc score matrix [(n+1), n]; entry (h, m) scores head h for modifier
    m+1.  Self arcs are forced to -inf."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).copy()
        n = scores.shape[1]
        if scores.shape != (n + 1, n):
            raise ValueError("arc score matrix must be [(n+1), n]")
        scores[np.arange(1, n + 1), np.arange(n)] = NEG_INF
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class ArcMarginals:
    """Arc probabilities [(n+1), n]; every modifier column sums to 1."""

    probabilities: np.ndarray


@dataclass(frozen=True)
class HeadConstraint:
    """Boolean matrix [(n+1), n] of permitted heads per modifier."""

    allowed: np.ndarray

    def __post_init__(self):
        allowed = np.asarray(self.allowed, dtype=bool).copy()
        n = allowed.shape[1]
        allowed[np.arange(1, n + 1), np.arange(n)] = False
        object.__setattr__(self, "allowed", allowed)
        if not allowed.any(axis=0).all():
            bad = int(np.flatnonzero(~allowed.any(axis=0))[0]) + 1
            raise ConstraintError(f"modifier {bad} has no allowed head")

    @classmethod
    def unconstrained(cls, n: int) -> "HeadConstraint":
        return cls(np.ones((n + 1, n), dtype=bool))

    def fix(self, modifier: int, head: int) -> "HeadConstraint":
        """Pin 1-based ``modifier`` to ``head`` (0 = ROOT)."""
        allowed = self.allowed.copy()
        allowed[:, modifier - 1] = False
        allowed[head, modifier - 1] = True
        return HeadConstraint(allowed)

    def is_singleton(self, modifier: int) -> bool:
        return int(self.allowed[:, modifier - 1].sum()) == 1


def _masked_scores(arcs: ArcScores, constraint: HeadConstraint | None) -> np.ndarray:
    scores = arcs.scores
    if constraint is None:
        return scores
    if constraint.allowed.shape != scores.shape:
        raise ValueError("constraint shape mismatch")
    return np.where(constraint.allowed, scores, NEG_INF)


def _check_feasible(scores: np.ndarray) -> None:
    """An arborescence exists iff every token is reachable from ROOT through
    arcs with finite score."""
    n = scores.shape[1]
    reachable = {0}
    frontier = [0]
    while frontier:
        h = frontier.pop()
        for m in range(1, n + 1):
            if m not in reachable and scores[h, m - 1] > NEG_INF:
                reachable.add(m)
                frontier.append(m)
    if len(reachable) != n + 1:
        missing = min(set(range(n + 1)) - reachable)
        raise ConstraintError(f"no feasible tree: token {missing} unreachable from ROOT")


def _shift_max(scores: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.max(np.where(np.isfinite(scores), scores, NEG_INF), axis=0)


def _shift_logsumexp(scores: np.ndarray) -> np.ndarray:
    m = _shift_max(scores)
    return m + np.log(np.exp(np.where(np.isfinite(scores), scores, NEG_INF) - m).sum(axis=0))


def _laplacian_minor(scores: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    n = scores.shape[1]
    w = np.exp(scores - shifts[None, :])
    w[~np.isfinite(scores)] = 0.0
    minor = -w[1:, :].copy()  # minor[h-1, m-1] = -w(h, m)
    minor[np.arange(n), np.arange(n)] = w.sum(axis=0)
    return minor


def _mt_compute(arcs: ArcScores, constraint: HeadConstraint | None, need_marginals: bool):
    scores = _masked_scores(arcs, constraint)
    _check_feasible(scores)
    last_err = None
    for shift_fn in (_shift_max, _shift_logsumexp):
        shifts = shift_fn(scores)
        minor = _laplacian_minor(scores, shifts)
        sign, logabsdet = np.linalg.slogdet(minor)
        if sign <= 0 or not np.isfinite(logabsdet):
            last_err = f"non-positive determinant (sign={sign})"
            continue
        log_z = float(logabsdet + shifts.sum())
        if not need_marginals:
            return log_z, None
        try:
            inv = np.linalg.inv(minor)
        except np.linalg.LinAlgError as exc:
            last_err = str(exc)
            continue
        cond = np.linalg.norm(minor, 1) * np.linalg.norm(inv, 1)
        if cond > 1e12:
            last_err = f"condition estimate {cond:.3g} beyond tolerance"
            continue
        n = arcs.n
        w = np.exp(scores - shifts[None, :])
        w[~np.isfinite(scores)] = 0.0
        diag = inv[np.arange(n), np.arange(n)]
        probs = np.empty_like(scores)
        probs[0, :] = w[0, :] * diag
        probs[1:, :] = w[1:, :] * (diag[None, :] - inv.T)
        probs = np.clip(probs, 0.0, 1.0)
        probs[~np.isfinite(scores)] = 0.0
        return log_z, ArcMarginals(probs)
    raise NumericalError(f"Matrix-Tree computation failed: {last_err}")


def mt_log_partition(arcs: ArcScores, constraint: HeadConstraint | None = None) -> float:
    """Log of the summed exp-scores of all (constraint-consistent) rooted
    spanning arborescences."""
    log_z, _ = _mt_compute(arcs, constraint, need_marginals=False)
    return log_z


def mt_arc_marginals(arcs: ArcScores, constraint: HeadConstraint | None = None) -> ArcMarginals:
    """Exact arc marginals via the Laplacian-inverse identities."""
    _, marg = _mt_compute(arcs, constraint, need_marginals=True)
    return marg


def tree_score(arcs: ArcScores, heads: np.ndarray) -> float:
    """Raw score of one head assignment (1-based heads, 0 = ROOT)."""
    heads = np.asarray(heads, dtype=int)
    return float(arcs.scores[heads, np.arange(arcs.n)].sum())


def validate_tree(heads: np.ndarray) -> None:
    heads = np.asarray(heads, dtype=int)
    n = len(heads)
    if n == 0:
        raise ValidationError("empty head vector")
    if (heads < 0).any() or (heads > n).any():
        raise ValidationError("head index out of range")
    for start in range(1, n + 1):
        node, seen = start, set()
        while node != 0:
            if node in seen:
                raise ValidationError(f"cycle through token {start}")
            seen.add(node)
            node = int(heads[node - 1])


def tree_nll_full(arcs: ArcScores, gold_heads: np.ndarray) -> tuple[float, np.ndarray]:
    """NLL of the gold tree; gradient per arc = marginal - gold indicator."""
    gold_heads = np.asarray(gold_heads, dtype=int)
    validate_tree(gold_heads)
    log_z, marg = _mt_compute(arcs, None, need_marginals=True)
    loss = -tree_score(arcs, gold_heads) + log_z
    grad = marg.probabilities.copy()
    grad[gold_heads, np.arange(arcs.n)] -= 1.0
    return float(loss), grad


def tree_nll_partial(arcs: ArcScores, constraint: HeadConstraint) -> tuple[float, np.ndarray]:
    """Marginalized NLL over constraint-consistent trees; gradient =
    unconstrained - constrained marginals."""
    log_z, marg = _mt_compute(arcs, None, need_marginals=True)
    log_z_c, marg_c = _mt_compute(arcs, constraint, need_marginals=True)
    return float(log_z - log_z_c), marg.probabilities - marg_c.probabilities


def tree_kd_loss(teacher: ArcMarginals, arcs: ArcScores) -> tuple[float, np.ndarray]:
    """Cross-entropy from a frozen teacher tree distribution; gradient =
    student - teacher arc marginals."""
    if teacher.probabilities.shape != arcs.scores.shape:
        raise ValueError("teacher/student dimension mismatch")
    mu = teacher.probabilities
    support = mu != 0.0
    expected = float((arcs.scores[support] * mu[support]).sum())
    log_z, marg = _mt_compute(arcs, None, need_marginals=True)
    return float(-expected + log_z), marg.probabilities - mu


def decode_tree(arcs: ArcScores, constraint: HeadConstraint | None = None) -> np.ndarray:
    """Maximum-score feasible arborescence (Chu-Liu/Edmonds); greedy choices
    scan heads in ascending order so ties break toward lower head indices."""
    scores = _masked_scores(arcs, constraint)
    _check_feasible(scores)
    n = arcs.n
    arc_weights = {}
    for m in range(1, n + 1):
        for h in range(n + 1):
            if h != m and np.isfinite(scores[h, m - 1]):
                arc_weights[(h, m)] = (float(scores[h, m - 1]), (h, m))
    chosen = _max_arborescence(set(range(n + 1)), arc_weights, next_id=n + 1)
    heads = np.zeros(n, dtype=int)
    for h, m in chosen:
        heads[m - 1] = h
    return heads


def _best_incoming(nodes, arcs):
    enter = {}
    for (h, m), (w, orig) in sorted(arcs.items()):
        if m == 0 or m not in nodes or h not in nodes:
            continue
        if m not in enter or w > enter[m][0]:
            enter[m] = (w, h, orig)
    return enter


def _find_cycle(enter):
    for start in enter:
        node, seen = start, []
        while node in enter:
            if node in seen:
                return seen[seen.index(node):]
            seen.append(node)
            node = enter[node][1]
    return None


def _max_arborescence(nodes, arcs, next_id):
    """Recursive cycle-contraction; ``arcs`` maps (h, m) -> (weight, original
    arc).  Returns the set of original arcs of the best arborescence."""
    enter = _best_incoming(nodes, arcs)
    if len(enter) != len(nodes) - 1:
        raise ConstraintError("no feasible tree during decoding")
    cycle = _find_cycle(enter)
    if cycle is None:
        return {orig for (_, _, orig) in enter.values()}
    cycle_set = set(cycle)
    c = next_id
    contracted = {}
    entry_of = {}
    for (h, m), (w, orig) in sorted(arcs.items()):
        if h not in nodes or m not in nodes:
            continue
        in_h, in_m = h in cycle_set, m in cycle_set
        if in_h and in_m:
            continue
        if in_m:
            adj = w - enter[m][0]
            if (h, c) not in contracted or adj > contracted[(h, c)][0]:
                contracted[(h, c)] = (adj, orig)
                entry_of[(h, c)] = m
        elif in_h:
            if (c, m) not in contracted or w > contracted[(c, m)][0]:
                contracted[(c, m)] = (w, orig)
        else:
            contracted[(h, m)] = (w, orig)
    sub_nodes = (nodes - cycle_set) | {c}
    chosen = _max_arborescence(sub_nodes, contracted, next_id + 1)
    entry = None
    for (h, c2), (_, orig) in contracted.items():
        if c2 == c and orig in chosen:
            entry = entry_of[(h, c2)]
            break
    if entry is None:
        raise ConstraintError("no feasible tree during decoding")
    for m in cycle:
        if m != entry:
            chosen.add(enter[m][2])
    return chosen


def head_margins(marg: ArcMarginals) -> np.ndarray:
    """Per modifier, the gap between its two most probable heads."""
    p = marg.probabilities
    part = np.sort(p, axis=0)
    return part[-1, :] - part[-2, :]


def head_least_confidence(marg: ArcMarginals) -> np.ndarray:
    return 1.0 - marg.probabilities.max(axis=0)


def head_entropies(marg: ArcMarginals) -> np.ndarray:
    p = marg.probabilities
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0.0, p * np.log(p), 0.0)
    return -terms.sum(axis=0)
