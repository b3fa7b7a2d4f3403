"""Sparse linear scorer, feature hashing, Adagrad training with gold/pseudo
stream mixing, and constraint-respecting pseudo-label generation.

All feature ids are stable 64-bit hashes (FNV-1a over strings, splitmix
mixing for composites), so scoring and training are bit-reproducible across
processes.  Hashed blocks share one flat table per kind (emission, arc,
arc-label); transition scores live in small dense blocks.  Collisions in the
hashed tables are accepted as model noise.
"""

from __future__ import annotations

import dataclasses
import functools
import json
from dataclasses import dataclass

import numpy as np

from .chain_crf import (
    ChainScores,
    ConstraintMask,
    kd_loss,
    marginals,
    nll_full,
    nll_partial,
    viterbi,
)
from .corpus import FULL, AnnotationState, Sentence
from .errors import ConfigError, ConstraintError, NumericalError, TrainingError
from .evaluation import attachment_scores, span_prf
from .tree_crf import (
    ArcScores,
    HeadConstraint,
    decode_tree,
    mt_arc_marginals,
    tree_kd_loss,
    tree_nll_full,
    tree_nll_partial,
)

_U64 = np.uint64
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_hash_memo: dict[str, int] = {}


def hash_string(text: str) -> int:
    """FNV-1a 64-bit; memoized, stable across runs (unlike builtin hash)."""
    cached = _hash_memo.get(text)
    if cached is not None:
        return cached
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    _hash_memo[text] = h
    return h


def _mix(a, b):
    """Order-sensitive 64-bit combiner with a splitmix-style finisher."""
    a = np.asarray(a, dtype=_U64)
    b = np.asarray(b, dtype=_U64)
    with np.errstate(over="ignore"):
        z = np.bitwise_xor(a * _U64(0xC2B2AE3D27D4EB4F), b) + _U64(0x9E3779B97F4A7C15)
        z = np.bitwise_xor(z, z >> _U64(30)) * _U64(0xBF58476D1CE4E5B9)
        z = np.bitwise_xor(z, z >> _U64(27)) * _U64(0x94D049BB133111EB)
        return np.bitwise_xor(z, z >> _U64(31))


def _tag(name: str) -> np.uint64:
    return _U64(hash_string(f"template:{name}"))


TOKEN_TEMPLATES = (
    "word", "lower", "pre1", "pre2", "pre3", "suf1", "suf2", "suf3",
    "shape", "pos", "prev", "prev2", "next", "next2",
)
ARC_TEMPLATES = ("hword", "hpos", "mword", "mpos", "pospair", "distbin", "direction")

_TOKEN_TAGS = {name: _tag(name) for name in TOKEN_TEMPLATES}
_ARC_TAGS = {name: _tag(name) for name in ARC_TEMPLATES}
_LABEL_TAG = _tag("label")


def _shape(form: str) -> str:
    return "".join(
        "X" if c.isupper() else "x" if c.islower() else "9" if c.isdigit() else c
        for c in form
    )


def _token_feature_ids(sentence: Sentence) -> np.ndarray:
    """[n, len(TOKEN_TEMPLATES)] uint64; every token emits the full template
    set (boundary neighbors use sentinel forms)."""
    forms = [t.form for t in sentence.tokens]
    n = len(forms)
    ids = np.empty((n, len(TOKEN_TEMPLATES)), dtype=_U64)
    for i, tok in enumerate(sentence.tokens):
        form = tok.form
        parts = {
            "word": form,
            "lower": form.lower(),
            "pre1": form[:1],
            "pre2": form[:2],
            "pre3": form[:3],
            "suf1": form[-1:],
            "suf2": form[-2:],
            "suf3": form[-3:],
            "shape": _shape(form),
            "pos": tok.pos,
            "prev": forms[i - 1] if i >= 1 else "<s>",
            "prev2": forms[i - 2] if i >= 2 else "<s2>",
            "next": forms[i + 1] if i + 1 < n else "</s>",
            "next2": forms[i + 2] if i + 2 < n else "</s2>",
        }
        for f, name in enumerate(TOKEN_TEMPLATES):
            ids[i, f] = _mix(_TOKEN_TAGS[name], _U64(hash_string(parts[name])))
    return ids


def _distance_bins(n: int) -> np.ndarray:
    d = np.arange(0, n + 1)[:, None] - np.arange(1, n + 1)[None, :]
    mag = np.minimum(np.abs(d), 11)
    mag = np.where(mag > 5, np.where(mag > 10, 7, 6), mag)
    return (np.sign(d) * mag + 8).astype(_U64)


def _arc_feature_ids(sentence: Sentence) -> np.ndarray:
    """[(n+1), n, len(ARC_TEMPLATES)] uint64 over (head, modifier) pairs;
    ROOT contributes sentinel word/POS at head position 0."""
    n = len(sentence)
    word_h = np.array(
        [hash_string("<root>")] + [hash_string(t.form) for t in sentence.tokens],
        dtype=_U64,
    )
    pos_h = np.array(
        [hash_string("ROOT")] + [hash_string(t.pos) for t in sentence.tokens],
        dtype=_U64,
    )
    word_m, pos_m = word_h[1:], pos_h[1:]
    ids = np.empty((n + 1, n, len(ARC_TEMPLATES)), dtype=_U64)
    ids[:, :, 0] = _mix(_ARC_TAGS["hword"], word_h)[:, None]
    ids[:, :, 1] = _mix(_ARC_TAGS["hpos"], pos_h)[:, None]
    ids[:, :, 2] = _mix(_ARC_TAGS["mword"], word_m)[None, :]
    ids[:, :, 3] = _mix(_ARC_TAGS["mpos"], pos_m)[None, :]
    ids[:, :, 4] = _mix(_ARC_TAGS["pospair"], _mix(pos_h[:, None], pos_m[None, :]))
    bins = _distance_bins(n)
    ids[:, :, 5] = _mix(_ARC_TAGS["distbin"], bins)
    ids[:, :, 6] = _mix(_ARC_TAGS["direction"], (bins > 8).astype(_U64))
    return ids


def featurize(sentence: Sentence, task: str) -> np.ndarray:
    """Deterministic hashed feature ids; all feature values are implicitly
    1.0.  Tagging: per-token [n, 14].  Parsing: per-arc [(n+1), n, 7]."""
    if task == "tagging":
        return _token_feature_ids(sentence)
    if task == "parsing":
        return _arc_feature_ids(sentence)
    raise ConfigError(f"unknown task {task!r}")


class FeatureCache:
    """Per-sentence feature id arrays, computed once and reused across
    cycles."""

    def __init__(self, task: str):
        self.task = task
        self._store: dict[str, np.ndarray] = {}

    def ids(self, sentence: Sentence) -> np.ndarray:
        got = self._store.get(sentence.id)
        if got is None:
            got = featurize(sentence, self.task)
            self._store[sentence.id] = got
        return got


@functools.lru_cache(maxsize=64)
def label_keys(labels: tuple[str, ...]) -> np.ndarray:
    return np.array(
        [_mix(_LABEL_TAG, _U64(hash_string(label))) for label in labels], dtype=_U64
    )


DEFAULT_TABLE_SIZE = 2**22


@dataclass
class ParameterStore:
    """Flat hashed weight tables plus dense transition blocks.  ``labels``
    are BIO tags for tagging and dependency labels for parsing."""

    task: str
    labels: tuple[str, ...]
    table_size: int
    emission: np.ndarray | None = None
    transitions: np.ndarray | None = None
    start: np.ndarray | None = None
    end: np.ndarray | None = None
    arc: np.ndarray | None = None
    arc_label: np.ndarray | None = None

    @classmethod
    def zeros(cls, task: str, labels, table_size: int = DEFAULT_TABLE_SIZE) -> "ParameterStore":
        labels = tuple(labels)
        num = len(labels)
        if num == 0:
            raise ConfigError("empty label inventory")
        store = cls(task=task, labels=labels, table_size=table_size)
        if task == "tagging":
            store.emission = np.zeros(table_size)
            store.transitions = np.zeros((num, num))
            store.start = np.zeros(num)
            store.end = np.zeros(num)
        elif task == "parsing":
            store.arc = np.zeros(table_size)
            store.arc_label = np.zeros(table_size)
        else:
            raise ConfigError(f"unknown task {task!r}")
        return store

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        names = ("emission", "transitions", "start", "end", "arc", "arc_label")
        return [(n, getattr(self, n)) for n in names if getattr(self, n) is not None]

    def copy(self) -> "ParameterStore":
        fresh = dataclasses.replace(self)
        for name, block in self.blocks():
            setattr(fresh, name, block.copy())
        return fresh

    def save(self, path) -> None:
        header = {
            "format": "alps-params-v1",
            "task": self.task,
            "labels": list(self.labels),
            "table_size": self.table_size,
            "blocks": [[name, list(block.shape)] for name, block in self.blocks()],
        }
        with open(path, "wb") as handle:
            handle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            for _, block in self.blocks():
                handle.write(np.ascontiguousarray(block, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ParameterStore":
        with open(path, "rb") as handle:
            header = json.loads(handle.readline().decode("utf-8"))
            if header.get("format") != "alps-params-v1":
                raise ConfigError(f"{path}: not a parameter snapshot")
            store = cls(
                task=header["task"],
                labels=tuple(header["labels"]),
                table_size=header["table_size"],
            )
            for name, shape in header["blocks"]:
                count = int(np.prod(shape))
                data = np.frombuffer(handle.read(count * 8), dtype="<f8")
                setattr(store, name, data.reshape(shape).astype(np.float64))
        return store


def _mod_index(ids: np.ndarray, table_size: int) -> np.ndarray:
    return (ids % _U64(table_size)).astype(np.intp)


def _emission_indices(params: ParameterStore, ids: np.ndarray) -> np.ndarray:
    """[n, F, L] table indices for token ids crossed with every label."""
    keys = label_keys(params.labels)
    mixed = _mix(ids[:, :, None], keys[None, None, :])
    return _mod_index(mixed, params.table_size)


def _chain_scores(params: ParameterStore, em_idx: np.ndarray) -> ChainScores:
    em = params.emission[em_idx].sum(axis=1)
    return ChainScores(em, params.transitions, params.start, params.end)


def _arc_scores(params: ParameterStore, arc_idx: np.ndarray) -> ArcScores:
    return ArcScores(params.arc[arc_idx].sum(axis=2))


def score(params: ParameterStore, sentence: Sentence, cache: FeatureCache | None = None):
    """Linear scores for one sentence: ChainScores (tagging) or ArcScores
    (parsing)."""
    ids = cache.ids(sentence) if cache is not None else featurize(sentence, params.task)
    if params.task == "tagging":
        return _chain_scores(params, _emission_indices(params, ids))
    return _arc_scores(params, _mod_index(ids, params.table_size))


def _arc_label_logits(params: ParameterStore, ids: np.ndarray, positions, heads) -> np.ndarray:
    """[len(positions), L] dependency-label logits for the given heads."""
    chosen = ids[np.asarray(heads, dtype=int), np.asarray(positions, dtype=int), :]
    keys = label_keys(params.labels)
    mixed = _mod_index(_mix(chosen[:, :, None], keys[None, None, :]), params.table_size)
    return params.arc_label[mixed].sum(axis=1), mixed


def predict_tags(params: ParameterStore, sentence: Sentence, cache: FeatureCache | None = None) -> list[str]:
    path = viterbi(score(params, sentence, cache))
    return [params.labels[y] for y in path]


def predict_tree(params: ParameterStore, sentence: Sentence, cache: FeatureCache | None = None):
    ids = cache.ids(sentence) if cache is not None else featurize(sentence, params.task)
    heads = decode_tree(_arc_scores(params, _mod_index(ids, params.table_size)))
    logits, _ = _arc_label_logits(params, ids, np.arange(len(sentence)), heads)
    return heads, [params.labels[k] for k in logits.argmax(axis=1)]


def constraint_mask_for(state: AnnotationState | None, labels: tuple[str, ...], n: int) -> ConstraintMask | None:
    if state is None or all(c is None for c in state.constraints):
        return None
    index = {label: i for i, label in enumerate(labels)}
    allowed = np.ones((n, len(labels)), dtype=bool)
    for i, constraint in enumerate(state.constraints):
        if constraint is not None:
            allowed[i, :] = False
            for label in constraint:
                allowed[i, index[label]] = True
    return ConstraintMask(allowed)


def head_constraint_for(state: AnnotationState | None, n: int) -> HeadConstraint | None:
    if state is None or all(c is None for c in state.constraints):
        return None
    allowed = np.ones((n + 1, n), dtype=bool)
    for i, constraint in enumerate(state.constraints):
        if constraint is not None:
            allowed[:, i] = False
            for head in constraint:
                allowed[head, i] = True
    return HeadConstraint(allowed)


@dataclass(frozen=True)
class PseudoLabelSet:
    """Frozen teacher marginals keyed by sentence id, each computed under
    that sentence's annotation constraints."""

    marginals: dict

    def __len__(self) -> int:
        return len(self.marginals)


def make_pseudo_labels(
    params: ParameterStore,
    items,
    cache: FeatureCache | None = None,
) -> PseudoLabelSet:
    """items: iterable of (sentence, AnnotationState | None); FULL sentences
    are skipped, since nothing in them is un-annotated."""
    out = {}
    for sentence, state in items:
        if state is not None and state.status == FULL:
            continue
        scores = score(params, sentence, cache)
        if params.task == "tagging":
            mask = constraint_mask_for(state, params.labels, len(sentence))
            out[sentence.id] = marginals(scores, mask)
        else:
            constraint = head_constraint_for(state, len(sentence))
            out[sentence.id] = mt_arc_marginals(scores, constraint)
    return PseudoLabelSet(out)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    minibatch_tokens: int = 256
    learning_rate: float = 0.1
    l2: float = 1e-6
    eval_every: int = 200
    mix_gold: int = 1
    mix_pseudo: int = 1
    table_size: int = DEFAULT_TABLE_SIZE

    def __post_init__(self):
        for name in ("steps", "minibatch_tokens", "eval_every", "mix_gold", "mix_pseudo", "table_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.l2 < 0:
            raise ConfigError("l2 must be non-negative")


@dataclass(frozen=True)
class TrainResult:
    params: ParameterStore
    history: tuple  # (step, dev metric) pairs
    best_step: int


class _Stream:
    """Endless shuffled iterator over (sentence, payload) items; reshuffles
    each time it runs out."""

    def __init__(self, items, rng):
        self.items = items
        self.rng = rng
        self.order = np.empty(0, dtype=int)
        self.pos = 0

    def next_batch(self, min_tokens: int):
        batch = []
        tokens = 0
        while tokens < min_tokens and len(batch) < len(self.items):
            if self.pos >= len(self.order):
                self.order = self.rng.permutation(len(self.items))
                self.pos = 0
            item = self.items[self.order[self.pos]]
            self.pos += 1
            batch.append(item)
            tokens += len(item[0])
        return batch


class _SparseGrad:
    def __init__(self):
        self.idx = []
        self.val = []

    def add(self, idx: np.ndarray, val: np.ndarray):
        self.idx.append(idx.ravel())
        self.val.append(np.ascontiguousarray(val, dtype=np.float64).ravel())

    def apply(self, table: np.ndarray, acc: np.ndarray, lr: float, l2: float, scale: float):
        if not self.idx:
            return
        idx = np.concatenate(self.idx)
        val = np.concatenate(self.val) * scale
        uniq, inverse = np.unique(idx, return_inverse=True)
        g = np.bincount(inverse, weights=val, minlength=len(uniq))
        g += l2 * table[uniq]
        acc[uniq] += g * g
        table[uniq] -= lr * g / (np.sqrt(acc[uniq]) + 1e-12)


def _apply_dense(table, acc, g, lr, l2, scale):
    g = g * scale + l2 * table
    acc += g * g
    table -= lr * g / (np.sqrt(acc) + 1e-12)


def dev_metric(params: ParameterStore, dev, cache: FeatureCache | None = None) -> float:
    """Span F1 for tagging, LAS for parsing."""
    if params.task == "tagging":
        golds = [[t.gold_tag for t in s.tokens] for s in dev]
        preds = [predict_tags(params, s, cache) for s in dev]
        return span_prf(golds, preds)[2]
    gold_heads, pred_heads, gold_labels, pred_labels = [], [], [], []
    for s in dev:
        heads, labels = predict_tree(params, s, cache)
        gold_heads.append([t.gold_head for t in s.tokens])
        gold_labels.append([t.gold_deplabel for t in s.tokens])
        pred_heads.append(list(heads))
        pred_labels.append(labels)
    return attachment_scores(gold_heads, pred_heads, gold_labels, pred_labels)[1]


def _gold_tag_indices(sentence: Sentence, labels) -> np.ndarray:
    index = {label: i for i, label in enumerate(labels)}
    return np.array([index[t.gold_tag] for t in sentence.tokens], dtype=int)


def _accumulate_arc_label(params, sentence, state, ids, grad_out: _SparseGrad):
    """Cross-entropy gradient of the per-arc label classifier on annotated
    (or all, when fully labeled) positions with their gold heads."""
    n = len(sentence)
    if state is None or state.status == FULL:
        positions = np.arange(n)
    else:
        positions = np.array(sorted(state.annotated_positions), dtype=int)
        if len(positions) == 0:
            return 0.0
    heads = np.array([sentence.tokens[i].gold_head for i in positions], dtype=int)
    logits, mixed = _arc_label_logits(params, ids, positions, heads)
    logits = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    index = {label: i for i, label in enumerate(params.labels)}
    loss = 0.0
    for row, i in enumerate(positions):
        gold = index[sentence.tokens[i].gold_deplabel]
        loss -= float(np.log(max(probs[row, gold], 1e-300)))
        probs[row, gold] -= 1.0
    grad_out.add(mixed, np.broadcast_to(probs[:, None, :], mixed.shape))
    return loss


def _batch_gradients(
    params, batch, source, task, labels, cache,
    em_grad, arc_grad, arc_label_grad, trans_g, start_g, end_g,
) -> float:
    """Accumulate one minibatch of loss gradients into the given buffers;
    gold items carry AnnotationStates, pseudo items carry teacher marginals."""
    total_loss = 0.0
    for sentence, payload in batch:
        ids = cache.ids(sentence) if cache is not None else featurize(sentence, task)
        if task == "tagging":
            em_idx = _emission_indices(params, ids)
            scores = _chain_scores(params, em_idx)
            if source == "gold":
                state = payload
                if state is None or state.status == FULL:
                    loss, grad = nll_full(scores, _gold_tag_indices(sentence, labels))
                else:
                    mask = constraint_mask_for(state, labels, len(sentence))
                    loss, grad = nll_partial(scores, mask)
            else:
                loss, grad = kd_loss(payload, scores)
            em_grad.add(em_idx, np.broadcast_to(grad.emissions[:, None, :], em_idx.shape))
            trans_g += grad.transitions
            start_g += grad.start
            end_g += grad.end
        else:
            arc_idx = _mod_index(ids, params.table_size)
            arcs = _arc_scores(params, arc_idx)
            if source == "gold":
                state = payload
                if state is None or state.status == FULL:
                    gold = np.array([t.gold_head for t in sentence.tokens], dtype=int)
                    loss, grad = tree_nll_full(arcs, gold)
                else:
                    constraint = head_constraint_for(state, len(sentence))
                    loss, grad = tree_nll_partial(arcs, constraint)
                loss += _accumulate_arc_label(params, sentence, state, ids, arc_label_grad)
            else:
                loss, grad = tree_kd_loss(payload, arcs)
            arc_grad.add(arc_idx, np.broadcast_to(grad[:, :, None], arc_idx.shape))
        total_loss += loss
    return total_loss


def train(
    items,
    dev,
    config: TrainConfig,
    task: str,
    labels,
    rng_seed: int,
    pseudo: PseudoLabelSet | None = None,
    pseudo_items=None,
    cache: FeatureCache | None = None,
    warm_start: ParameterStore | None = None,
) -> TrainResult:
    """Train from scratch (or from ``warm_start``) on gold ``items`` =
    [(sentence, AnnotationState | None)], optionally interleaving KD
    minibatches against cached teacher marginals per the mixing ratio.
    Returns the parameters of the best dev checkpoint.
    """
    items = list(items)
    if not items:
        raise TrainingError("empty labeled set")
    labels = tuple(labels)
    params = warm_start.copy() if warm_start is not None else ParameterStore.zeros(
        task, labels, config.table_size
    )
    accum = {name: np.zeros_like(block) for name, block in params.blocks()}
    rng = np.random.default_rng(rng_seed)
    gold_stream = _Stream(items, rng)
    pseudo_list = []
    if pseudo is not None and len(pseudo):
        if pseudo_items is None:
            raise ConfigError("pseudo labels supplied without pseudo_items")
        pseudo_list = [
            (sentence, pseudo.marginals[sentence.id])
            for sentence in pseudo_items
            if sentence.id in pseudo.marginals
        ]
    pseudo_stream = _Stream(pseudo_list, rng) if pseudo_list else None
    schedule = ["gold"] * config.mix_gold + ["pseudo"] * config.mix_pseudo

    best_metric, best_step, snapshot = -np.inf, 0, None
    history = []
    for step in range(1, config.steps + 1):
        source = "gold"
        if pseudo_stream is not None:
            source = schedule[(step - 1) % len(schedule)]
        stream = gold_stream if source == "gold" else pseudo_stream
        batch = stream.next_batch(config.minibatch_tokens)
        em_grad, arc_grad, arc_label_grad = _SparseGrad(), _SparseGrad(), _SparseGrad()
        if task == "tagging":
            trans_g = np.zeros_like(params.transitions)
            start_g = np.zeros_like(params.start)
            end_g = np.zeros_like(params.end)
        try:
            total_loss = _batch_gradients(
                params, batch, source, task, labels, cache,
                em_grad, arc_grad, arc_label_grad,
                trans_g if task == "tagging" else None,
                start_g if task == "tagging" else None,
                end_g if task == "tagging" else None,
            )
        except (ConstraintError, NumericalError) as err:
            raise TrainingError(f"non-finite loss at step {step}") from err
        if not np.isfinite(total_loss):
            raise TrainingError(f"non-finite loss at step {step}")
        scale = 1.0 / len(batch)
        lr, l2 = config.learning_rate, config.l2
        if task == "tagging":
            em_grad.apply(params.emission, accum["emission"], lr, l2, scale)
            _apply_dense(params.transitions, accum["transitions"], trans_g, lr, l2, scale)
            _apply_dense(params.start, accum["start"], start_g, lr, l2, scale)
            _apply_dense(params.end, accum["end"], end_g, lr, l2, scale)
        else:
            arc_grad.apply(params.arc, accum["arc"], lr, l2, scale)
            arc_label_grad.apply(params.arc_label, accum["arc_label"], lr, l2, scale)
        if dev and (step % config.eval_every == 0 or step == config.steps):
            metric = dev_metric(params, dev, cache)
            history.append((step, metric))
            if metric > best_metric:
                best_metric, best_step = metric, step
                snapshot = params.copy()
    if snapshot is None:
        snapshot, best_step = params.copy(), config.steps
    return TrainResult(params=snapshot, history=tuple(history), best_step=best_step)
