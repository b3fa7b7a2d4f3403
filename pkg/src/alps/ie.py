"""Pipelined information extraction: a chain-CRF mention tagger feeding a
local pairwise relation classifier, plus the multi-task querying rules
layered on top.

Sentence uncertainty blends the two sub-tasks (``beta`` weighting the
mention side), relation uncertainty aggregates per mention before
averaging, and the partial-annotation ratio for relation candidates is
inflated by the estimated chance that a candidate rests on wrong mentions
(the NIL adjustment).  Annotating a relation first repairs its predicted
mentions against gold where possible; repaired mentions unlock a second
querying stage within the same cycle.

The relation classifier is a per-pair softmax over hashed features shared
in style with the sequence models: local cross-entropy training needs no
marginalization, so partially annotated sentences simply contribute the
pairs that were actually examined, and distillation covers the rest with
soft labels.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .chain_crf import (
    ChainMarginals,
    marginals,
    token_entropies,
    token_least_confidence,
    token_margins,
    viterbi,
)
from .corpus import (
    PARTIAL,
    AnnotationState,
    PoolState,
    Sentence,
    SyntheticSpec,
    Token,
    full_annotation,
    generate_synthetic,
    simulate_annotation,
    tag_spans,
)
from .errors import ConfigError, ParseError, TrainingError, ValidationError
from .evaluation import prf
from .estimator import (
    CONFIDENT_MARGIN,
    CorrectnessSample,
    LogisticModel,
    adaptive_ratio,
    collect_dev_samples,
    fit_logistic,
)
from .learner import (
    DEFAULT_TABLE_SIZE,
    FeatureCache,
    ParameterStore,
    _mix,
    _mod_index,
    _SparseGrad,
    _Stream,
    _tag,
    constraint_mask_for,
    hash_string,
    label_keys,
    make_pseudo_labels,
    score,
    train,
)
from .selector import (
    ALConfig,
    _seed_done_path,
    _take_tokens,
    load_seed_records,
    partial_select,
    write_aggregate_csv,
    write_record,
)

PREDICTED = "PREDICTED"
GOLD_CORRECTED = "GOLD-CORRECTED"
ANNOTATED = "ANNOTATED"

NONE_LABEL = "NONE"

OUTCOME_ANNOTATED = "ANNOTATED"
OUTCOME_CORRECTED = "MENTIONS-CORRECTED+ANNOTATED"
OUTCOME_DISCARDED = "DISCARDED"


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class Mention:
    """Token span (inclusive end) with a type and a provenance tag."""

    start: int
    end: int
    kind: str
    source: str = PREDICTED

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValidationError(f"bad mention span ({self.start}, {self.end})")
        if self.source not in (PREDICTED, GOLD_CORRECTED, ANNOTATED):
            raise ValidationError(f"unknown mention source {self.source!r}")

    @property
    def key(self) -> tuple:
        return (self.start, self.end, self.kind)

    @property
    def span(self) -> tuple:
        return (self.start, self.end)


@dataclass(frozen=True)
class RelationCandidate:
    """One feasible mention pair: label distribution, margin, and the
    per-token NONE-tag marginals inside its mentions (the NIL inputs)."""

    left: Mention
    right: Mention
    distribution: np.ndarray
    margin: float
    nil_inputs: np.ndarray

    def __post_init__(self):
        dist = np.asarray(self.distribution, dtype=np.float64)
        object.__setattr__(self, "distribution", dist)
        object.__setattr__(
            self, "nil_inputs", np.asarray(self.nil_inputs, dtype=np.float64)
        )
        if abs(float(dist.sum()) - 1.0) > 1e-9:
            raise ValidationError("relation distribution does not sum to 1")
        if self.left.start > self.right.start:
            raise ValidationError("candidate pair not ordered left to right")

    @property
    def uncertainty(self) -> float:
        return 1.0 - self.margin

    def touches(self, mention_key: tuple) -> bool:
        return self.left.key == mention_key or self.right.key == mention_key


@dataclass(frozen=True)
class IEUncertainty:
    unc_mention: float
    unc_relation: float
    beta: float
    combined: float


def combined_uncertainty(
    unc_mention: float, unc_relation: float, beta: float = 0.9
) -> IEUncertainty:
    if not 0.0 <= beta <= 1.0:
        raise ValidationError(f"beta {beta} outside [0, 1]")
    combined = beta * unc_mention + (1.0 - beta) * unc_relation
    return IEUncertainty(unc_mention, unc_relation, beta, combined)


@dataclass(frozen=True)
class IESentence:
    """Tokens with gold mentions and gold relations; relations index the
    mention tuple and are stored left to right."""

    id: str
    forms: tuple
    pos: tuple
    mentions: tuple
    relations: tuple

    def __len__(self) -> int:
        return len(self.forms)


@dataclass(frozen=True)
class IECorpus:
    sentences: tuple
    _index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self._index.update({s.id: s for s in self.sentences})

    @property
    def task(self) -> str:
        return "ie"

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, sentence_id: str) -> IESentence:
        return self._index[sentence_id]


def validate_ie_sentence(sentence: IESentence) -> None:
    n = len(sentence.forms)
    if n == 0:
        raise ValidationError(f"sentence {sentence.id}: empty")
    if len(sentence.pos) != n:
        raise ValidationError(f"sentence {sentence.id}: pos length mismatch")
    previous_end = -1
    for m in sentence.mentions:
        if m.end >= n:
            raise ValidationError(f"sentence {sentence.id}: mention exceeds length")
        if m.start <= previous_end:
            raise ValidationError(
                f"sentence {sentence.id}: mentions overlap or are unsorted"
            )
        previous_end = m.end
    seen = set()
    for i, j, label in sentence.relations:
        if not (0 <= i < j < len(sentence.mentions)):
            raise ValidationError(f"sentence {sentence.id}: bad relation indices")
        if label == NONE_LABEL:
            raise ValidationError(f"sentence {sentence.id}: gold relation labeled NONE")
        if (i, j) in seen:
            raise ValidationError(f"sentence {sentence.id}: duplicate relation pair")
        seen.add((i, j))


def gold_bio(sentence: IESentence) -> list:
    tags = ["O"] * len(sentence)
    for m in sentence.mentions:
        tags[m.start] = f"B-{m.kind}"
        for i in range(m.start + 1, m.end + 1):
            tags[i] = f"I-{m.kind}"
    return tags


def tagging_view(sentence: IESentence) -> Sentence:
    """The sentence as a BIO tagging instance for the mention model."""
    tags = gold_bio(sentence)
    tokens = tuple(
        Token(form=f, pos=p, gold_tag=t)
        for f, p, t in zip(sentence.forms, sentence.pos, tags)
    )
    return Sentence(id=sentence.id, tokens=tokens)


def _norm_pair_key(a: tuple, b: tuple) -> tuple:
    return (a, b) if a <= b else (b, a)


def gold_relation_map(sentence: IESentence) -> dict:
    """Mention-key pair -> gold label; pairs absent from the map hold no
    relation."""
    out = {}
    for i, j, label in sentence.relations:
        key = _norm_pair_key(sentence.mentions[i].key, sentence.mentions[j].key)
        out[key] = label
    return out


# ---------------------------------------------------------------------------
# JSON-lines corpus format


def load_ie_jsonl(path) -> IECorpus:
    """One sentence per line: ``{"id", "tokens", "pos", "mentions": [[start,
    end, kind]...], "relations": [[i, j, label]...]}`` with inclusive span
    ends and relation entries indexing the mention list."""
    sentences = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as err:
                raise ParseError(f"{path}:{lineno}: bad JSON ({err})") from err
            try:
                sid = str(raw["id"])
                forms = tuple(str(t) for t in raw["tokens"])
                pos = tuple(str(p) for p in raw["pos"])
                raw_mentions = [
                    (int(s), int(e), str(k)) for s, e, k in raw["mentions"]
                ]
                raw_relations = [
                    (int(i), int(j), str(lab)) for i, j, lab in raw.get("relations", [])
                ]
            except (KeyError, TypeError, ValueError) as err:
                raise ParseError(f"{path}:{lineno}: malformed sentence ({err})") from err
            order = sorted(range(len(raw_mentions)), key=lambda k: raw_mentions[k])
            remap = {old: new for new, old in enumerate(order)}
            mentions = tuple(
                Mention(s, e, k, source=ANNOTATED)
                for s, e, k in (raw_mentions[old] for old in order)
            )
            relations = []
            for i, j, label in raw_relations:
                if not (0 <= i < len(mentions) and 0 <= j < len(mentions)) or i == j:
                    raise ParseError(f"{path}:{lineno}: bad relation indices")
                a, b = sorted((remap[i], remap[j]))
                relations.append((a, b, label))
            sentence = IESentence(
                id=sid, forms=forms, pos=pos,
                mentions=mentions, relations=tuple(relations),
            )
            try:
                validate_ie_sentence(sentence)
            except ValidationError as err:
                raise ParseError(f"{path}:{lineno}: {err}") from err
            sentences.append(sentence)
    if not sentences:
        raise ParseError(f"{path}: no sentences")
    return IECorpus(tuple(sentences))


def write_ie_jsonl(corpus: IECorpus, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for s in corpus:
            row = {
                "id": s.id,
                "tokens": list(s.forms),
                "pos": list(s.pos),
                "mentions": [[m.start, m.end, m.kind] for m in s.mentions],
                "relations": [[i, j, label] for i, j, label in s.relations],
            }
            handle.write(json.dumps(row, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Relation classifier


RELATION_TEMPLATES = (
    "lword", "lpos", "lkind", "rword", "rpos", "rkind", "kindpair", "gapbin",
)
_REL_TAGS = tuple(_tag(f"rel:{name}") for name in RELATION_TEMPLATES)
_U64 = np.uint64


def _gap_bin(gap: int) -> int:
    if gap < 0:
        return -1
    if gap <= 3:
        return gap
    if gap <= 6:
        return 4
    if gap <= 10:
        return 5
    return 6


def relation_feature_ids(view: Sentence, left: Mention, right: Mention) -> np.ndarray:
    gap = right.start - left.end - 1
    values = (
        view.tokens[left.start].form,
        view.tokens[left.start].pos,
        left.kind,
        view.tokens[right.start].form,
        view.tokens[right.start].pos,
        right.kind,
        f"{left.kind}|{right.kind}",
        str(_gap_bin(gap)),
    )
    return np.array(
        [_mix(tag, _U64(hash_string(v))) for tag, v in zip(_REL_TAGS, values)],
        dtype=_U64,
    )


@dataclass
class RelationModel:
    """Per-pair softmax over relation labels (NONE included) on one hashed
    weight table."""

    labels: tuple
    table_size: int
    table: np.ndarray | None = None

    @classmethod
    def zeros(cls, labels, table_size: int = DEFAULT_TABLE_SIZE) -> "RelationModel":
        labels = tuple(labels)
        if NONE_LABEL not in labels:
            raise ConfigError("relation labels must include NONE")
        if len(labels) < 2:
            raise ConfigError("need at least one non-NONE relation label")
        return cls(labels=labels, table_size=table_size, table=np.zeros(table_size))

    def copy(self) -> "RelationModel":
        return replace(self, table=self.table.copy())

    def save(self, path) -> None:
        header = {
            "format": "alps-relation-v1",
            "labels": list(self.labels),
            "table_size": self.table_size,
        }
        with open(path, "wb") as handle:
            handle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            handle.write(np.ascontiguousarray(self.table, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "RelationModel":
        with open(path, "rb") as handle:
            header = json.loads(handle.readline().decode("utf-8"))
            if header.get("format") != "alps-relation-v1":
                raise ConfigError(f"{path}: not a relation model snapshot")
            size = header["table_size"]
            data = np.frombuffer(handle.read(size * 8), dtype="<f8")
            return cls(
                labels=tuple(header["labels"]),
                table_size=size,
                table=data.astype(np.float64),
            )


def _relation_mixed(model: RelationModel, ids: np.ndarray) -> np.ndarray:
    keys = label_keys(model.labels)
    return _mod_index(_mix(ids[..., None], keys), model.table_size)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    out = np.exp(shifted)
    out /= out.sum(axis=-1, keepdims=True)
    return out


def relation_distribution(model: RelationModel, ids: np.ndarray) -> np.ndarray:
    logits = model.table[_relation_mixed(model, ids)].sum(axis=-2)
    return _softmax(logits)


def make_candidates(
    model: RelationModel,
    view: Sentence,
    mentions,
    o_marginals: np.ndarray,
) -> tuple:
    """All mention pairs as candidates, ordered left to right; each carries
    the NONE-tag marginals of the tokens inside its two mentions."""
    mentions = sorted(mentions, key=lambda m: m.key)
    out = []
    for left, right in itertools.combinations(mentions, 2):
        dist = relation_distribution(model, relation_feature_ids(view, left, right))
        top2 = np.sort(dist)[-2:]
        margin = float(top2[1] - top2[0]) if len(dist) > 1 else 1.0
        nil_inputs = np.concatenate(
            [
                o_marginals[left.start : left.end + 1],
                o_marginals[right.start : right.end + 1],
            ]
        )
        out.append(RelationCandidate(left, right, dist, margin, nil_inputs))
    return tuple(out)


# ---------------------------------------------------------------------------
# Pipeline inference


@dataclass(frozen=True)
class IEInference:
    """One pass over a sentence: tag marginals, decoded mentions, and the
    relation candidates built from them."""

    marginals: ChainMarginals
    token_margins: np.ndarray
    tags: tuple
    mentions: tuple
    candidates: tuple


def infer_ie(
    mention_params: ParameterStore,
    relation_model: RelationModel,
    view: Sentence,
    state: AnnotationState | None = None,
    mentions=None,
    cache: FeatureCache | None = None,
) -> IEInference:
    """Run the pipeline on one sentence; ``state`` pins annotated tags as
    constraints, ``mentions`` overrides mention decoding (used after
    corrections)."""
    mask = constraint_mask_for(state, mention_params.labels, len(view))
    scores = score(mention_params, view, cache)
    marg = marginals(scores, mask)
    path = viterbi(scores, mask)
    tags = tuple(mention_params.labels[y] for y in path)
    if mentions is None:
        mentions = tuple(
            Mention(s, e - 1, kind) for s, e, kind in tag_spans(tags)
        )
    o_column = mention_params.labels.index("O")
    candidates = make_candidates(
        relation_model, view, mentions, marg.unary[:, o_column]
    )
    return IEInference(marg, token_margins(marg), tags, tuple(mentions), candidates)


# ---------------------------------------------------------------------------
# Querying formulas


def relation_sentence_uncertainty(candidates, mentions=None) -> float:
    """Max candidate uncertainty per mention, averaged over mentions; 0 with
    no mentions.  Mentions default to those appearing in the candidates; a
    mention touching no candidate contributes 0 to the mean."""
    if mentions is None:
        seen = {}
        for c in candidates:
            for m in (c.left, c.right):
                seen.setdefault(m.key, m)
        mentions = tuple(seen.values())
    if not mentions:
        return 0.0
    total = 0.0
    for m in mentions:
        touching = [c.uncertainty for c in candidates if c.touches(m.key)]
        total += max(touching) if touching else 0.0
    return total / len(mentions)


def nil_alpha(candidates, nil_model: LogisticModel) -> float:
    """Mean over candidates of the probability that at least one token
    inside their mentions is truly NIL (outside any mention)."""
    if not candidates:
        raise ValidationError("no candidates")
    values = []
    for c in candidates:
        p_nil = nil_model.predict(c.nil_inputs)
        values.append(1.0 - float(np.prod(1.0 - p_nil)))
    return float(np.mean(values))


def nil_adjusted_ratio(r_origin: float, candidates, nil_model: LogisticModel) -> float:
    """Interpolate the candidate ratio toward 1 by the estimated share of
    candidates built on wrong mentions: alpha * 1 + (1 - alpha) * r_origin."""
    if not 0.0 <= r_origin <= 1.0:
        raise ValidationError(f"ratio {r_origin} outside [0, 1]")
    if not candidates:
        return r_origin
    alpha = nil_alpha(candidates, nil_model)
    return alpha + (1.0 - alpha) * r_origin


def fit_nil_model(
    mention_params: ParameterStore,
    dev_views,
    cache: FeatureCache | None = None,
) -> LogisticModel:
    """Logistic map from a token's predicted NONE-tag marginal to the chance
    it is truly outside any mention, fitted on dev."""
    dev_views = list(dev_views)
    if not dev_views:
        raise ValidationError("empty dev set")
    o_column = mention_params.labels.index("O")
    samples = []
    for view in dev_views:
        marg = marginals(score(mention_params, view, cache))
        o_marg = marg.unary[:, o_column]
        for i, token in enumerate(view.tokens):
            samples.append(CorrectnessSample(float(o_marg[i]), token.gold_tag == "O"))
    return fit_logistic(samples)


# ---------------------------------------------------------------------------
# Annotation protocol


@dataclass(frozen=True)
class RelationAnnotation:
    """Result of examining one candidate: the outcome, the revealed label
    (None when discarded), the mentions after correction in candidate
    order, and the subset that actually changed."""

    outcome: str
    label: str | None
    left: Mention
    right: Mention
    corrected: tuple


def _match_gold(mention: Mention, gold_mentions, strict: bool) -> Mention | None:
    """The gold mention this prediction can be fixed to: exact span match
    when ``strict``, otherwise the gold with the largest token overlap
    (earliest start on ties); None when nothing qualifies."""
    if strict:
        for g in gold_mentions:
            if g.span == mention.span:
                return g
        return None
    best, best_overlap = None, 0
    for g in gold_mentions:
        overlap = min(mention.end, g.end) - max(mention.start, g.start) + 1
        if overlap > best_overlap:
            best, best_overlap = g, overlap
    return best


def _examined(mention: Mention, gold: Mention | None) -> Mention:
    if gold is None:
        return mention
    source = ANNOTATED if gold.key == mention.key else GOLD_CORRECTED
    return Mention(gold.start, gold.end, gold.kind, source=source)


def annotate_relation(
    candidate: RelationCandidate,
    gold: IESentence,
    strict: bool = False,
) -> RelationAnnotation:
    """Examine one candidate against gold: repair what mentions can be
    matched, discard when neither can, otherwise reveal the gold label for
    the (repaired) pair, NONE when gold holds no such relation."""
    matches = [
        _match_gold(m, gold.mentions, strict)
        for m in (candidate.left, candidate.right)
    ]
    if matches[0] is None and matches[1] is None:
        return RelationAnnotation(
            OUTCOME_DISCARDED, None, candidate.left, candidate.right, ()
        )
    left = _examined(candidate.left, matches[0])
    right = _examined(candidate.right, matches[1])
    corrected = tuple(m for m in (left, right) if m.source == GOLD_CORRECTED)
    if matches[0] is not None and matches[1] is not None and left.key != right.key:
        label = gold_relation_map(gold).get(
            _norm_pair_key(left.key, right.key), NONE_LABEL
        )
    else:
        # a bogus mention in the pair, or both collapsed onto one gold
        # mention: no gold relation can apply
        label = NONE_LABEL
    outcome = OUTCOME_CORRECTED if corrected else OUTCOME_ANNOTATED
    return RelationAnnotation(outcome, label, left, right, corrected)


def _ranked(candidates, eligible, ratio: float) -> list:
    take = math.ceil(ratio * len(eligible))
    order = sorted(eligible, key=lambda i: (candidates[i].margin, i))
    return order[:take]


def relation_query(entries, ratio: float) -> dict:
    """Stage-1 pick: per sentence the ceil(ratio * n) most uncertain
    candidates; entries are (sentence id, candidates) pairs."""
    if not 0.0 < ratio <= 1.0:
        raise ValidationError(f"ratio {ratio} outside (0, 1]")
    return {
        sid: _ranked(candidates, range(len(candidates)), ratio)
        for sid, candidates in entries
    }


def second_stage_query(entries, ratio: float) -> dict:
    """Stage-2 pick: same ceil rule, restricted to candidates whose pair
    involves at least one examined (non-predicted) mention."""
    if not 0.0 < ratio <= 1.0:
        raise ValidationError(f"ratio {ratio} outside (0, 1]")
    out = {}
    for sid, candidates in entries:
        eligible = [
            i
            for i, c in enumerate(candidates)
            if c.left.source != PREDICTED or c.right.source != PREDICTED
        ]
        out[sid] = _ranked(candidates, eligible, ratio)
    return out


# ---------------------------------------------------------------------------
# Relation model training


def train_relation_model(
    gold_pairs,
    labels,
    config,
    rng_seed: int = 0,
    pseudo_pairs=None,
    table_size: int | None = None,
) -> RelationModel:
    """Adagrad cross-entropy on (feature ids, target) pairs; gold targets
    are label indices, pseudo targets teacher distributions.  Minibatches
    interleave the two streams one-to-one when both are present."""
    gold_pairs = list(gold_pairs)
    if not gold_pairs:
        raise TrainingError("empty relation training set")
    model = RelationModel.zeros(labels, table_size or config.table_size)
    acc = np.zeros_like(model.table)
    keys = label_keys(model.labels)
    rng = np.random.default_rng(rng_seed)
    streams = {"gold": _Stream(gold_pairs, rng)}
    schedule = ["gold"]
    if pseudo_pairs:
        streams["pseudo"] = _Stream(list(pseudo_pairs), rng)
        schedule = ["gold"] * config.mix_gold + ["pseudo"] * config.mix_pseudo
    for step in range(1, config.steps + 1):
        name = schedule[(step - 1) % len(schedule)]
        batch = streams[name].next_batch(config.minibatch_tokens)
        ids = np.stack([pair[0] for pair in batch])
        mixed = _mod_index(_mix(ids[:, :, None], keys), model.table_size)
        probs = _softmax(model.table[mixed].sum(axis=1))
        if name == "gold":
            targets = np.zeros_like(probs)
            targets[np.arange(len(batch)), [pair[1] for pair in batch]] = 1.0
        else:
            targets = np.stack([pair[1] for pair in batch])
        loss = -float(
            (targets * np.log(np.maximum(probs, 1e-300))).sum()
        )
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        grad = _SparseGrad()
        grad.add(mixed, np.broadcast_to((probs - targets)[:, None, :], mixed.shape))
        grad.apply(
            model.table, acc, config.learning_rate, config.l2, 1.0 / len(batch)
        )
    return model


# ---------------------------------------------------------------------------
# Evaluation


def predict_ie(
    mention_params: ParameterStore,
    relation_model: RelationModel,
    view: Sentence,
    cache: FeatureCache | None = None,
):
    """(mention key set, relation triple set) for one sentence; a relation
    triple is (left key, right key, label) with NONE predictions dropped."""
    inf = infer_ie(mention_params, relation_model, view, cache=cache)
    mention_keys = {m.key for m in inf.mentions}
    relations = set()
    for c in inf.candidates:
        label = relation_model.labels[int(np.argmax(c.distribution))]
        if label != NONE_LABEL:
            relations.add((c.left.key, c.right.key, label))
    return mention_keys, relations


def evaluate_ie(
    mention_params: ParameterStore,
    relation_model: RelationModel,
    sentences,
    views: dict | None = None,
    cache: FeatureCache | None = None,
) -> dict:
    """Micro precision/recall/F1 at both pipeline levels; a relation counts
    when both mention keys and the label match gold exactly."""
    m_tp = m_pred = m_gold = 0
    r_tp = r_pred = r_gold = 0
    for sentence in sentences:
        view = views[sentence.id] if views is not None else tagging_view(sentence)
        pred_mentions, pred_relations = predict_ie(
            mention_params, relation_model, view, cache
        )
        gold_mentions = {m.key for m in sentence.mentions}
        gold_relations = {
            (key[0], key[1], label)
            for key, label in gold_relation_map(sentence).items()
        }
        m_tp += len(pred_mentions & gold_mentions)
        m_pred += len(pred_mentions)
        m_gold += len(gold_mentions)
        r_tp += len(pred_relations & gold_relations)
        r_pred += len(pred_relations)
        r_gold += len(gold_relations)
    m_p, m_r, m_f = prf(m_tp, m_pred, m_gold)
    r_p, r_r, r_f = prf(r_tp, r_pred, r_gold)
    return {
        "mention_precision": m_p,
        "mention_recall": m_r,
        "mention_f1": m_f,
        "relation_precision": r_p,
        "relation_recall": r_r,
        "relation_f1": r_f,
    }


def save_ie_model(path, mention_params: ParameterStore, relation_model: RelationModel) -> None:
    header = {
        "format": "alps-ie-v1",
        "mention": {
            "labels": list(mention_params.labels),
            "table_size": mention_params.table_size,
            "blocks": [
                [name, list(block.shape)] for name, block in mention_params.blocks()
            ],
        },
        "relation": {
            "labels": list(relation_model.labels),
            "table_size": relation_model.table_size,
        },
    }
    with open(path, "wb") as handle:
        handle.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, block in mention_params.blocks():
            handle.write(np.ascontiguousarray(block, dtype="<f8").tobytes())
        handle.write(np.ascontiguousarray(relation_model.table, dtype="<f8").tobytes())


def load_ie_model(path):
    with open(path, "rb") as handle:
        header = json.loads(handle.readline().decode("utf-8"))
        if header.get("format") != "alps-ie-v1":
            raise ConfigError(f"{path}: not an IE model snapshot")
        mention = ParameterStore(
            task="tagging",
            labels=tuple(header["mention"]["labels"]),
            table_size=header["mention"]["table_size"],
        )
        for name, shape in header["mention"]["blocks"]:
            count = int(np.prod(shape))
            data = np.frombuffer(handle.read(count * 8), dtype="<f8")
            setattr(mention, name, data.reshape(shape).astype(np.float64))
        size = header["relation"]["table_size"]
        data = np.frombuffer(handle.read(size * 8), dtype="<f8")
        relation = RelationModel(
            labels=tuple(header["relation"]["labels"]),
            table_size=size,
            table=data.astype(np.float64),
        )
    return mention, relation


# ---------------------------------------------------------------------------
# Synthetic IE corpora


@dataclass(frozen=True)
class SyntheticIESpec:
    """Mention layer reuses the synthetic tagging generator; relations are
    assigned to close mention pairs via a deterministic kind-pair rule with
    random dropout."""

    num_sentences: int = 200
    vocab_size: int = 160
    entity_types: tuple = ("ORG", "PER")
    relation_labels: tuple = ("part-of", "works-for")
    min_len: int = 5
    max_len: int = 14
    noise: float = 0.0
    max_gap: int = 6
    drop: float = 0.15

    def __post_init__(self):
        if not self.relation_labels:
            raise ConfigError("at least one relation label required")
        if NONE_LABEL in self.relation_labels:
            raise ConfigError("NONE is reserved for the absent relation")
        if not 0.0 <= self.drop <= 1.0:
            raise ConfigError("drop must lie in [0, 1]")
        if self.max_gap < 0:
            raise ConfigError("max_gap must be >= 0")


def generate_synthetic_ie(spec: SyntheticIESpec, rng_seed: int) -> IECorpus:
    base = generate_synthetic(
        SyntheticSpec(
            task="tagging",
            num_sentences=spec.num_sentences,
            vocab_size=spec.vocab_size,
            entity_types=spec.entity_types,
            min_len=spec.min_len,
            max_len=spec.max_len,
            noise=spec.noise,
        ),
        rng_seed,
    )
    rng = np.random.default_rng([rng_seed, 104729])
    kind_index = {k: i for i, k in enumerate(spec.entity_types)}
    num_kinds = len(spec.entity_types)
    sentences = []
    for s in base:
        tags = [t.gold_tag for t in s.tokens]
        mentions = tuple(
            Mention(a, b - 1, kind, source=ANNOTATED)
            for a, b, kind in tag_spans(tags)
        )
        relations = []
        for i, j in itertools.combinations(range(len(mentions)), 2):
            gap = mentions[j].start - mentions[i].end - 1
            if gap > spec.max_gap:
                continue
            if rng.random() < spec.drop:
                continue
            slot = kind_index[mentions[i].kind] * num_kinds + kind_index[mentions[j].kind]
            relations.append(
                (i, j, spec.relation_labels[slot % len(spec.relation_labels)])
            )
        sentences.append(
            IESentence(
                id=s.id,
                forms=tuple(t.form for t in s.tokens),
                pos=tuple(t.pos for t in s.tokens),
                mentions=mentions,
                relations=tuple(relations),
            )
        )
    return IECorpus(tuple(sentences))


# ---------------------------------------------------------------------------
# Active-learning driver


@dataclass(frozen=True)
class IEOptions:
    """Knobs specific to the two-sub-task pipeline: the mention weight in
    sentence uncertainty, how full annotation prices relations (per pair,
    or two cost units per annotated entity), and whether mention repair
    requires exact span matches."""

    beta: float = 0.9
    fa_relation_cost: str = "entities2x"
    strict_match: bool = False

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if self.fa_relation_cost not in ("entities2x", "pairs"):
            raise ConfigError(f"unknown fa_relation_cost {self.fa_relation_cost!r}")


@dataclass
class IEAnnotation:
    """What the annotator has produced for one sentence: tag constraints,
    examined relation pairs with their labels, and the gold-confirmed
    mentions."""

    tags: AnnotationState
    relations: dict
    examined: dict


def _all_gold_pairs(sentence: IESentence) -> dict:
    gold_map = gold_relation_map(sentence)
    out = {}
    for a, b in itertools.combinations(sentence.mentions, 2):
        key = _norm_pair_key(a.key, b.key)
        out[key] = gold_map.get(key, NONE_LABEL)
    return out


def _full_ie_annotation(sentence: IESentence, view: Sentence) -> IEAnnotation:
    return IEAnnotation(
        tags=full_annotation(view, "tagging"),
        relations=_all_gold_pairs(sentence),
        examined={m.key: m for m in sentence.mentions},
    )


@dataclass
class IERunState:
    """Everything one seed's IE run carries between cycles."""

    config: ALConfig
    options: IEOptions
    corpus: IECorpus
    test: tuple
    views: dict
    bio_labels: tuple
    relation_labels: tuple
    pool: PoolState
    seed_states: dict
    cache: FeatureCache
    rng: np.random.Generator
    experiment_seed: int
    mention_params: ParameterStore | None = None
    relation_model: RelationModel | None = None
    cycle_index: int = 0
    cum_reading: int = 0
    cum_labeling: float = 0.0
    cum_labeling_alt: float = 0.0


def _bio_label_inventory(*corpora) -> tuple:
    labels = {"O"}
    for corpus in corpora:
        if corpus is None:
            continue
        for s in corpus:
            for m in s.mentions:
                labels.add(f"B-{m.kind}")
                labels.add(f"I-{m.kind}")
    return tuple(sorted(labels))


def _relation_label_inventory(*corpora) -> tuple:
    labels = {NONE_LABEL}
    for corpus in corpora:
        if corpus is None:
            continue
        for s in corpus:
            for _, _, label in s.relations:
                labels.add(label)
    return tuple(sorted(labels))


def init_ie_run(
    config: ALConfig,
    corpus: IECorpus,
    experiment_seed: int,
    test_corpus: IECorpus | None = None,
    options: IEOptions = IEOptions(),
) -> IERunState:
    rng = np.random.default_rng(experiment_seed)
    sentences = list(corpus.sentences)
    if test_corpus is not None:
        test = list(test_corpus.sentences)
    else:
        test_tokens = config.test_tokens
        if test_tokens is None:
            test_tokens = 2 * config.batch_tokens
        test, sentences = _take_tokens(sentences, rng, test_tokens)
    seed_sents, sentences = _take_tokens(sentences, rng, config.batch_tokens)
    dev_sents, sentences = _take_tokens(sentences, rng, config.batch_tokens)
    if not seed_sents or not dev_sents or not sentences:
        raise ConfigError("corpus too small for test/seed/dev splits plus a pool")
    views = {s.id: tagging_view(s) for s in corpus}
    if test_corpus is not None:
        views.update({s.id: tagging_view(s) for s in test_corpus})
    pool = PoolState(
        seed={s.id for s in seed_sents},
        dev={s.id for s in dev_sents},
        labeled={},
        unlabeled={s.id for s in sentences},
        budget_remaining=config.cycles * config.batch_tokens,
    )
    pool.check()
    state = IERunState(
        config=config,
        options=options,
        corpus=corpus,
        test=tuple(test),
        views=views,
        bio_labels=_bio_label_inventory(corpus, test_corpus),
        relation_labels=_relation_label_inventory(corpus, test_corpus),
        pool=pool,
        seed_states={
            s.id: _full_ie_annotation(s, views[s.id]) for s in seed_sents
        },
        cache=FeatureCache("tagging"),
        rng=rng,
        experiment_seed=experiment_seed,
    )
    state.mention_params, state.relation_model = _train_ie_models(state)
    return state


def _annotation_for(state: IERunState, sid: str) -> IEAnnotation:
    if sid in state.seed_states:
        return state.seed_states[sid]
    return state.pool.labeled[sid]


def _gold_pair_items(state: IERunState) -> list:
    index = {label: k for k, label in enumerate(state.relation_labels)}
    items = []
    for sid in sorted(state.pool.seed) + sorted(state.pool.labeled):
        ann = _annotation_for(state, sid)
        view = state.views[sid]
        for (lkey, rkey), label in sorted(ann.relations.items()):
            ids = relation_feature_ids(view, Mention(*lkey), Mention(*rkey))
            items.append((ids, index[label]))
    return items


def _dev_views(state: IERunState) -> list:
    return [state.views[sid] for sid in sorted(state.pool.dev)]


def _train_ie_models(state: IERunState):
    """Mention model exactly as in the single-task runs (gold, then an
    optional distilled second model); relation model likewise, with soft
    labels taken from the first relation model on un-examined pool pairs."""
    config = state.config
    gold_items = [
        (state.views[sid], _annotation_for(state, sid).tags)
        for sid in sorted(state.pool.seed) + sorted(state.pool.labeled)
    ]
    dev = _dev_views(state)
    base_seed = state.experiment_seed * 100_000 + state.cycle_index * 10
    first = train(
        gold_items, dev, config.train, "tagging", state.bio_labels,
        rng_seed=base_seed, cache=state.cache,
    )
    mention = first.params
    if config.self_training:
        targets = []
        for sid in sorted(state.pool.labeled):
            ann = state.pool.labeled[sid]
            if ann.tags.status == PARTIAL:
                targets.append((state.views[sid], ann.tags))
        for sid in sorted(state.pool.unlabeled):
            targets.append((state.views[sid], None))
        if targets:
            pseudo = make_pseudo_labels(first.params, targets, state.cache)
            second = train(
                gold_items, dev, config.train, "tagging", state.bio_labels,
                rng_seed=base_seed + 1, cache=state.cache,
                pseudo=pseudo, pseudo_items=[v for v, _ in targets],
            )
            mention = second.params

    gold_pairs = _gold_pair_items(state)
    rel_first = train_relation_model(
        gold_pairs, state.relation_labels, config.train, rng_seed=base_seed + 2
    )
    relation = rel_first
    if config.self_training:
        pseudo_pairs = []
        for sid in sorted(state.pool.labeled) + sorted(state.pool.unlabeled):
            ann = state.pool.labeled.get(sid)
            view = state.views[sid]
            inf = infer_ie(
                mention, rel_first, view,
                state=ann.tags if ann is not None else None,
                cache=state.cache,
            )
            annotated = ann.relations if ann is not None else {}
            for c in inf.candidates:
                if _norm_pair_key(c.left.key, c.right.key) in annotated:
                    continue
                ids = relation_feature_ids(view, c.left, c.right)
                pseudo_pairs.append((ids, c.distribution))
        if pseudo_pairs:
            relation = train_relation_model(
                gold_pairs, state.relation_labels, config.train,
                rng_seed=base_seed + 3, pseudo_pairs=pseudo_pairs,
            )
    return mention, relation


def _mention_uncertainty(inf: IEInference, acquisition: str) -> float:
    if acquisition == "margin":
        per_token = 1.0 - inf.token_margins
    elif acquisition == "least-confidence":
        per_token = token_least_confidence(inf.marginals)
    else:
        per_token = token_entropies(inf.marginals)
    return float(per_token.mean())


def _select_ie_sentences(state: IERunState, pool_sents):
    """Greedy budget fill by combined uncertainty (random order under RAND);
    returns (selected, inference map over the ranked pool)."""
    config = state.config
    infer_map = {}
    if config.strategy == "RAND":
        order = [pool_sents[i] for i in state.rng.permutation(len(pool_sents))]
    else:
        ranked = []
        for s in pool_sents:
            inf = infer_ie(
                state.mention_params, state.relation_model,
                state.views[s.id], cache=state.cache,
            )
            infer_map[s.id] = inf
            unc = combined_uncertainty(
                _mention_uncertainty(inf, config.acquisition),
                relation_sentence_uncertainty(inf.candidates, inf.mentions),
                state.options.beta,
            )
            ranked.append((-unc.combined, s.id, s))
        ranked.sort(key=lambda row: (row[0], row[1]))
        order = [s for _, _, s in ranked]
    selected, tokens = [], 0
    for s in order:
        if tokens >= config.batch_tokens:
            break
        selected.append(s)
        tokens += len(s)
    for s in selected:
        if s.id not in infer_map:
            infer_map[s.id] = infer_ie(
                state.mention_params, state.relation_model,
                state.views[s.id], cache=state.cache,
            )
    return selected, infer_map


def _pin_mention(tags: AnnotationState, mention: Mention) -> AnnotationState:
    """Reveal the BIO tags of a gold-confirmed mention as constraints."""
    constraints = list(tags.constraints)
    mask = list(tags.annotated_mask)
    for pos in range(mention.start, mention.end + 1):
        tag = ("B-" if pos == mention.start else "I-") + mention.kind
        constraints[pos] = frozenset({tag})
        mask[pos] = True
    return AnnotationState.from_constraints(constraints, mask)


@dataclass
class _CycleCounters:
    relation_queries: int = 0
    discarded: int = 0
    corrected: int = 0
    relation_annotations: int = 0
    second_stage: int = 0


def _apply_relation_annotation(
    ann: IEAnnotation,
    candidate: RelationCandidate,
    result: RelationAnnotation,
    replaced: dict,
    counters: _CycleCounters,
) -> None:
    """Fold one examined candidate into the sentence's annotation; corrected
    mentions are priced once, discarded queries not at all."""
    counters.relation_queries += 1
    if result.outcome == OUTCOME_DISCARDED:
        counters.discarded += 1
        return
    for original, examined in (
        (candidate.left, result.left),
        (candidate.right, result.right),
    ):
        if examined.source == PREDICTED:
            continue
        replaced[original.key] = examined
        if examined.key not in ann.examined:
            ann.examined[examined.key] = examined
            if examined.source == GOLD_CORRECTED:
                counters.corrected += 1
            ann.tags = _pin_mention(ann.tags, examined)
    if result.left.key != result.right.key:
        key = _norm_pair_key(result.left.key, result.right.key)
        if key not in ann.relations:
            ann.relations[key] = result.label
            counters.relation_annotations += 1


def _relation_dev_samples(state: IERunState) -> list:
    """Correctness samples for the relation-ratio estimator: a dev candidate
    is right when its argmax label matches gold for that exact span pair
    (NONE when the pair is not a gold relation)."""
    samples = []
    for sid in sorted(state.pool.dev):
        sentence = state.corpus[sid]
        gold_map = gold_relation_map(sentence)
        inf = infer_ie(
            state.mention_params, state.relation_model,
            state.views[sid], cache=state.cache,
        )
        for c in inf.candidates:
            predicted = state.relation_model.labels[int(np.argmax(c.distribution))]
            truth = gold_map.get(_norm_pair_key(c.left.key, c.right.key), NONE_LABEL)
            correct = predicted == truth
            samples.append(
                CorrectnessSample(c.margin, correct and c.margin > CONFIDENT_MARGIN)
            )
    return samples


def _merged_mentions(predicted, replaced: dict, examined: dict) -> tuple:
    merged = {}
    for m in predicted:
        kept = replaced.get(m.key, m)
        merged[kept.key] = kept
    for m in examined.values():
        merged.setdefault(m.key, m)
    return tuple(sorted(merged.values(), key=lambda m: m.key))


def run_ie_cycle(state: IERunState):
    """One AL round over the pipeline; returns the cycle record, or None
    when the pool is exhausted."""
    config = state.config
    options = state.options
    if not state.pool.unlabeled:
        return None
    if state.pool.budget_remaining <= 0:
        raise ValidationError("no budget remaining")
    state.cycle_index += 1
    pool_sents = [state.corpus[sid] for sid in sorted(state.pool.unlabeled)]
    selected, infer_map = _select_ie_sentences(state, pool_sents)

    q_margins = np.concatenate([infer_map[s.id].token_margins for s in selected])
    bio_index = {label: k for k, label in enumerate(state.bio_labels)}
    q_gold = [
        bio_index[t.gold_tag]
        for s in selected
        for t in state.views[s.id].tokens
    ]
    q_pred = np.concatenate(
        [infer_map[s.id].marginals.unary.argmax(axis=1) for s in selected]
    )
    actual_error = float(np.mean(q_pred != np.asarray(q_gold)))

    ratio = 1.0
    estimated_error = None
    relation_ratio = None
    alpha = None
    counters = _CycleCounters()
    annotations = {}
    if config.strategy == "PA":
        if config.ratio_mode == "adaptive":
            samples = collect_dev_samples(
                state.mention_params, _dev_views(state), "tagging", state.cache
            )
            token_model = fit_logistic(samples)
            estimated_error = 1.0 - float(token_model.predict(np.sort(q_margins)).mean())
            ratio = adaptive_ratio(token_model, q_margins, config.r_min, config.r_max)
        else:
            ratio = config.fixed_ratio
        positions = partial_select(
            [(s.id, infer_map[s.id].token_margins) for s in selected], ratio
        )
        replaced_map = {s.id: {} for s in selected}
        for s in selected:
            ann = IEAnnotation(
                tags=simulate_annotation(state.views[s.id], positions[s.id], "tagging"),
                relations={},
                examined={},
            )
            annotations[s.id] = ann
            # gold mentions fully revealed by the token stage count as newly
            # annotated mentions (already paid for token-wise)
            mask = ann.tags.annotated_mask
            for m in s.mentions:
                if all(mask[p] for p in range(m.start, m.end + 1)):
                    revealed = Mention(m.start, m.end, m.kind, source=ANNOTATED)
                    ann.examined[revealed.key] = revealed
                    replaced_map[s.id][revealed.key] = revealed

        batch_margins = [
            c.margin for s in selected for c in infer_map[s.id].candidates
        ]
        if config.ratio_mode == "adaptive":
            rel_samples = _relation_dev_samples(state)
            if rel_samples and batch_margins:
                rel_model = fit_logistic(rel_samples)
                r_origin = adaptive_ratio(
                    rel_model, batch_margins, config.r_min, config.r_max
                )
            else:
                # no relation evidence to estimate from; fall back to the
                # token-stage ratio
                r_origin = ratio
        else:
            r_origin = config.fixed_ratio
        nil = fit_nil_model(state.mention_params, _dev_views(state), state.cache)
        batch_candidates = [
            c for s in selected for c in infer_map[s.id].candidates
        ]
        relation_ratio = nil_adjusted_ratio(r_origin, batch_candidates, nil)
        if batch_candidates:
            alpha = nil_alpha(batch_candidates, nil)

        chosen = relation_query(
            [(s.id, infer_map[s.id].candidates) for s in selected], relation_ratio
        )
        for s in selected:
            candidates = infer_map[s.id].candidates
            for idx in chosen[s.id]:
                result = annotate_relation(
                    candidates[idx], s, options.strict_match
                )
                _apply_relation_annotation(
                    annotations[s.id], candidates[idx], result,
                    replaced_map[s.id], counters,
                )
        for s in selected:
            ann = annotations[s.id]
            if not ann.examined:
                continue
            merged = _merged_mentions(
                infer_map[s.id].mentions, replaced_map[s.id], ann.examined
            )
            inf2 = infer_ie(
                state.mention_params, state.relation_model, state.views[s.id],
                state=ann.tags, mentions=merged, cache=state.cache,
            )
            fresh = [
                c for c in inf2.candidates
                if _norm_pair_key(c.left.key, c.right.key) not in ann.relations
            ]
            for idx in second_stage_query([(s.id, fresh)], relation_ratio)[s.id]:
                result = annotate_relation(fresh[idx], s, options.strict_match)
                counters.second_stage += 1
                _apply_relation_annotation(
                    ann, fresh[idx], result, replaced_map[s.id], counters
                )
    else:
        for s in selected:
            annotations[s.id] = _full_ie_annotation(s, state.views[s.id])

    reading = sum(len(s) for s in selected)
    mention_cost = 0.0
    relation_cost = 0.0
    annotated_count = 0
    for s in selected:
        ann = annotations[s.id]
        mention_cost += float(sum(ann.tags.annotated_mask))
        annotated_count += sum(ann.tags.annotated_mask) + len(ann.relations)
        if config.strategy != "PA":
            if options.fa_relation_cost == "entities2x":
                relation_cost += 2.0 * len(s.mentions)
            else:
                relation_cost += float(len(ann.relations))
    if config.strategy == "PA":
        relation_cost = float(counters.relation_annotations + counters.corrected)

    for s in selected:
        state.pool.unlabeled.discard(s.id)
        state.pool.labeled[s.id] = annotations[s.id]
    state.pool.budget_remaining -= config.batch_tokens
    state.pool.check()
    state.cum_reading += reading
    state.cum_labeling += mention_cost + relation_cost
    state.cum_labeling_alt += mention_cost

    state.mention_params, state.relation_model = _train_ie_models(state)
    dev_sentences = [state.corpus[sid] for sid in sorted(state.pool.dev)]
    record = {
        "cycle": state.cycle_index,
        "reading_cost": state.cum_reading,
        "labeling_cost": state.cum_labeling,
        "labeling_cost_alt": state.cum_labeling_alt,
        "ratio": ratio,
        "estimated_error": estimated_error,
        "actual_error": actual_error,
        "queried_sentences": len(selected),
        "annotated_substructures": annotated_count,
        "relation_ratio": relation_ratio,
        "nil_alpha": alpha,
        "relation_queries": counters.relation_queries,
        "discarded_queries": counters.discarded,
        "corrected_mentions": counters.corrected,
        "second_stage_queries": counters.second_stage,
        "test": evaluate_ie(
            state.mention_params, state.relation_model,
            state.test, state.views, state.cache,
        ),
        "dev": evaluate_ie(
            state.mention_params, state.relation_model,
            dev_sentences, state.views, state.cache,
        ),
    }
    return record


def run_ie_seed(
    config: ALConfig,
    corpus: IECorpus,
    experiment_seed: int,
    test_corpus: IECorpus | None = None,
    seed_dir: str | None = None,
    options: IEOptions = IEOptions(),
) -> list:
    state = init_ie_run(config, corpus, experiment_seed, test_corpus, options)
    records = []
    early_stop = False
    for _ in range(config.cycles):
        record = run_ie_cycle(state)
        if record is None:
            early_stop = True
            break
        records.append(record)
        if seed_dir is not None:
            write_record(seed_dir, record)
    if seed_dir is not None:
        with open(_seed_done_path(seed_dir), "w", encoding="utf-8") as handle:
            json.dump(
                {"cycles_run": len(records), "early_stop": early_stop},
                handle, sort_keys=True,
            )
            handle.write("\n")
    return records


def run_ie_experiment(
    config: ALConfig,
    corpus: IECorpus,
    test_corpus: IECorpus | None = None,
    out_dir: str | None = None,
    resume: bool = False,
    seed_filter: int | None = None,
    options: IEOptions = IEOptions(),
) -> dict:
    """Same artifact layout as the single-task driver: per-seed cycle
    records, done markers, and one aggregate CSV."""
    per_seed = {}
    for experiment_seed in config.seeds:
        if seed_filter is not None and experiment_seed != seed_filter:
            continue
        seed_dir = None
        if out_dir is not None:
            seed_dir = os.path.join(out_dir, f"seed{experiment_seed}")
            os.makedirs(seed_dir, exist_ok=True)
            if resume and os.path.exists(_seed_done_path(seed_dir)):
                per_seed[experiment_seed] = load_seed_records(seed_dir)
                continue
        per_seed[experiment_seed] = run_ie_seed(
            config, corpus, experiment_seed, test_corpus, seed_dir, options
        )
    if out_dir is not None and per_seed:
        write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"), per_seed)
    return per_seed
