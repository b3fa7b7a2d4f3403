"""Data model, corpus file IO, synthetic corpora, and gold-annotation
simulation.

Sentences and corpora are immutable once built.  Annotation bookkeeping
(AnnotationState, PoolState) is the mutable side and is only ever written by
the cycle driver.  Positions are 0-based throughout; dependency heads use the
usual 1-based convention where 0 means ROOT.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

BIO_PATTERN = re.compile(r"^(O|[BI]-\S+)$")

DEFAULT_POS_COST_SET = frozenset({"PROPN", "ADJ"})


@dataclass(frozen=True)
class Token:
    form: str
    pos: str
    gold_tag: str | None = None
    gold_head: int | None = None
    gold_deplabel: str | None = None


@dataclass(frozen=True)
class Sentence:
    id: str
    tokens: tuple[Token, ...]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Corpus:
    task: str  # "tagging" | "parsing"
    sentences: tuple[Sentence, ...]
    _index: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        self._index.update({s.id: s for s in self.sentences})

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def by_id(self, sentence_id: str) -> Sentence:
        return self._index[sentence_id]

    def __getitem__(self, sentence_id: str) -> Sentence:
        return self._index[sentence_id]


UNLABELED = "UNLABELED"
PARTIAL = "PARTIAL"
FULL = "FULL"


@dataclass(frozen=True)
class AnnotationState:
    """Per-position constraints: None means unconstrained, otherwise the set
    of permitted labels (tagging) or heads (parsing).  Annotated positions
    are pinned to their gold value."""

    status: str
    constraints: tuple
    annotated_mask: tuple

    @classmethod
    def from_constraints(cls, constraints, annotated_mask) -> "AnnotationState":
        constraints = tuple(constraints)
        annotated_mask = tuple(bool(b) for b in annotated_mask)
        if all(c is None for c in constraints):
            status = UNLABELED
        elif all(c is not None and len(c) == 1 for c in constraints):
            status = FULL
        else:
            status = PARTIAL
        return cls(status, constraints, annotated_mask)

    @classmethod
    def unlabeled(cls, n: int) -> "AnnotationState":
        return cls.from_constraints((None,) * n, (False,) * n)

    @property
    def annotated_positions(self) -> set[int]:
        return {i for i, b in enumerate(self.annotated_mask) if b}


@dataclass
class PoolState:
    """Bookkeeping for one AL run; the id sets are pairwise disjoint."""

    seed: set[str]
    dev: set[str]
    labeled: dict[str, AnnotationState]
    unlabeled: set[str]
    budget_remaining: int = 0

    def check(self) -> None:
        groups = [self.seed, self.dev, set(self.labeled), self.unlabeled]
        total = sum(len(g) for g in groups)
        if len(set().union(*groups)) != total:
            raise ValidationError("pool id sets overlap")
        if self.budget_remaining < 0:
            raise ValidationError("negative budget")


def validate_sentence(sentence: Sentence, task: str) -> None:
    n = len(sentence)
    if n < 1:
        raise ValidationError(f"sentence {sentence.id}: empty")
    if task == "tagging":
        previous = "O"
        for i, tok in enumerate(sentence.tokens):
            tag = tok.gold_tag
            if tag is None or not BIO_PATTERN.match(tag):
                raise ValidationError(f"sentence {sentence.id}: bad tag {tag!r} at {i}")
            if tag.startswith("I-"):
                if previous not in (f"B-{tag[2:]}", tag):
                    raise ValidationError(
                        f"sentence {sentence.id}: orphan {tag} at position {i}"
                    )
            previous = tag
    elif task == "parsing":
        heads = []
        for i, tok in enumerate(sentence.tokens):
            if tok.gold_head is None or tok.gold_deplabel is None:
                raise ValidationError(f"sentence {sentence.id}: missing head at {i}")
            if tok.gold_head == i + 1:
                raise ValidationError(f"sentence {sentence.id}: self-headed token {i + 1}")
            if not 0 <= tok.gold_head <= n:
                raise ValidationError(f"sentence {sentence.id}: head out of range at {i}")
            heads.append(tok.gold_head)
        for start in range(1, n + 1):
            node, seen = start, set()
            while node != 0:
                if node in seen:
                    raise ValidationError(f"sentence {sentence.id}: head cycle")
                seen.add(node)
                node = heads[node - 1]
    else:
        raise ValidationError(f"unknown task {task!r}")


def _orphan_inside(tag: str, previous: str) -> bool:
    return tag.startswith("I-") and previous not in (f"B-{tag[2:]}", tag)


def repair_bio(tags: list[str], strict: bool = False) -> list[str]:
    """Convert orphan I-X to B-X; in strict mode orphans raise instead."""
    repaired = []
    previous = "O"
    for i, tag in enumerate(tags):
        if _orphan_inside(tag, previous):
            if strict:
                raise ValidationError(f"orphan {tag} at position {i}")
            tag = "B-" + tag[2:]
        repaired.append(tag)
        previous = tag
    return repaired


def tag_spans(tags) -> list[tuple[int, int, str]]:
    """(start, end_exclusive, type) mention spans of a BIO sequence; an
    orphan I-X opens a span, matching the repair convention."""
    spans = []
    start, kind = None, None
    for i, tag in enumerate(tags):
        if tag == "O" or tag.startswith("B-") or (start is not None and tag[2:] != kind):
            if start is not None:
                spans.append((start, i, kind))
                start, kind = None, None
        if tag.startswith("B-") or (tag.startswith("I-") and start is None):
            start, kind = i, tag[2:]
    if start is not None:
        spans.append((start, len(tags), kind))
    return spans


# ---------------------------------------------------------------------------
# File formats


def load_column_tagging(path, strict_bio: bool = False) -> Corpus:
    """Whitespace-separated ``form pos tag`` lines, blank line between
    sentences."""
    sentences = []
    rows, row_lines = [], []

    def flush():
        if not rows:
            return
        tags = [t for _, _, t in rows]
        if strict_bio:
            previous = "O"
            for tag, line_no in zip(tags, row_lines):
                if _orphan_inside(tag, previous):
                    raise ValidationError(f"{path}:{line_no}: orphan {tag}")
                previous = tag
        else:
            tags = repair_bio(tags)
        tokens = tuple(
            Token(form=f, pos=p, gold_tag=tag) for (f, p, _), tag in zip(rows, tags)
        )
        sentence = Sentence(id=f"s{len(sentences)}", tokens=tokens)
        validate_sentence(sentence, "tagging")
        sentences.append(sentence)
        rows.clear()
        row_lines.clear()

    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                flush()
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ParseError(
                    f"{path}:{lineno}: expected `form pos tag`, got {len(parts)} fields"
                )
            rows.append(tuple(parts))
            row_lines.append(lineno)
    flush()
    if not sentences:
        warnings.warn(f"{path}: no sentences loaded")
    return Corpus(task="tagging", sentences=tuple(sentences))


def write_column_tagging(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for sentence in corpus:
            for tok in sentence.tokens:
                handle.write(f"{tok.form} {tok.pos} {tok.gold_tag}\n")
            handle.write("\n")


def load_conllu(path, require_single_root: bool = True) -> Corpus:
    """Standard 10-column CoNLL-U; multiword-token and empty-node lines are
    skipped."""
    sentences = []
    tokens, sent_id = [], None

    def flush():
        nonlocal tokens, sent_id
        if not tokens:
            sent_id = None
            return
        sid = sent_id if sent_id is not None else f"s{len(sentences)}"
        sentence = Sentence(id=sid, tokens=tuple(tokens))
        validate_sentence(sentence, "parsing")
        if require_single_root:
            roots = sum(1 for t in tokens if t.gold_head == 0)
            if roots != 1:
                raise ValidationError(f"sentence {sid}: {roots} root tokens")
        sentences.append(sentence)
        tokens, sent_id = [], None

    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                match = re.match(r"#\s*sent_id\s*=\s*(\S+)", line)
                if match:
                    sent_id = match.group(1)
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise ParseError(f"{path}:{lineno}: expected 10 columns, got {len(cols)}")
            if "-" in cols[0] or "." in cols[0]:
                continue
            try:
                head = int(cols[6])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer head {cols[6]!r}") from None
            tokens.append(
                Token(form=cols[1], pos=cols[3], gold_head=head, gold_deplabel=cols[7])
            )
    flush()
    if not sentences:
        warnings.warn(f"{path}: no sentences loaded")
    return Corpus(task="parsing", sentences=tuple(sentences))


def write_conllu(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for sentence in corpus:
            handle.write(f"# sent_id = {sentence.id}\n")
            for i, tok in enumerate(sentence.tokens, start=1):
                cols = [
                    str(i), tok.form, "_", tok.pos, "_", "_",
                    str(tok.gold_head), tok.gold_deplabel, "_", "_",
                ]
                handle.write("\t".join(cols) + "\n")
            handle.write("\n")


# ---------------------------------------------------------------------------
# Synthetic corpora


@dataclass(frozen=True)
class SyntheticSpec:
    task: str = "tagging"
    num_sentences: int = 100
    vocab_size: int = 400
    entity_types: tuple[str, ...] = ("PER", "LOC")
    min_len: int = 4
    max_len: int = 14
    noise: float = 0.0

    def __post_init__(self):
        if self.task not in ("tagging", "parsing"):
            raise ConfigError(f"unknown synthetic task {self.task!r}")
        if self.num_sentences < 0:
            raise ConfigError("num_sentences must be >= 0")
        if self.task == "tagging" and not self.entity_types:
            raise ConfigError("at least one entity type required")
        if self.vocab_size < 8 * max(1, len(self.entity_types)):
            raise ConfigError("vocab_size too small for disjoint word blocks")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError("noise must lie in [0, 1]")


def _tagging_states(entity_types):
    states = ["O"]
    for t in entity_types:
        states.extend([f"B-{t}", f"I-{t}"])
    return states


def _tagging_word_blocks(spec: SyntheticSpec):
    """Disjoint vocabulary block per state; word identity determines the tag
    exactly when noise is 0."""
    states = _tagging_states(spec.entity_types)
    entity_share = spec.vocab_size // 2
    block_size = entity_share // (len(states) - 1) if len(states) > 1 else 0
    blocks, cursor = {}, 0
    for state in states[1:]:
        blocks[state] = np.arange(cursor, cursor + block_size)
        cursor += block_size
    blocks["O"] = np.arange(cursor, spec.vocab_size)
    return blocks


def _word_pos_tagging(word: int, blocks) -> str:
    for state, block in blocks.items():
        if state != "O" and block[0] <= word <= block[-1]:
            return "PROPN"
    o_block = blocks["O"]
    offset = word - o_block[0]
    if offset < len(o_block) * 3 // 10:
        return "ADJ"
    return ("NOUN", "VERB", "DET", "ADV")[offset % 4]


def _generate_tagging(spec: SyntheticSpec, rng) -> Corpus:
    states = _tagging_states(spec.entity_types)
    k = len(spec.entity_types)
    index = {s: i for i, s in enumerate(states)}
    trans = np.zeros((len(states), len(states)))
    start = np.zeros(len(states))
    start[index["O"]] = 0.85
    trans[index["O"], index["O"]] = 0.75
    for t in spec.entity_types:
        b, i_state = index[f"B-{t}"], index[f"I-{t}"]
        start[b] = 0.15 / k
        trans[index["O"], b] = 0.25 / k
        trans[b, i_state] = 0.5
        trans[b, index["O"]] = 0.4
        trans[i_state, i_state] = 0.4
        trans[i_state, index["O"]] = 0.5
        for u in spec.entity_types:
            trans[b, index[f"B-{u}"]] += 0.1 / k
            trans[i_state, index[f"B-{u}"]] += 0.1 / k
    trans /= trans.sum(axis=1, keepdims=True)
    blocks = _tagging_word_blocks(spec)

    sentences = []
    for s_idx in range(spec.num_sentences):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        tags, state = [], None
        for _ in range(n):
            probs = start if state is None else trans[index[state]]
            state = states[int(rng.choice(len(states), p=probs))]
            tags.append(state)
        tags = repair_bio(tags)
        tokens = []
        for tag in tags:
            block = blocks[tag]
            if spec.noise > 0.0 and rng.random() < spec.noise:
                word = int(rng.integers(0, spec.vocab_size))
            else:
                word = int(rng.choice(block))
            tokens.append(
                Token(form=f"w{word}", pos=_word_pos_tagging(word, blocks), gold_tag=tag)
            )
        sentence = Sentence(id=f"s{s_idx}", tokens=tuple(tokens))
        validate_sentence(sentence, "tagging")
        sentences.append(sentence)
    return Corpus(task="tagging", sentences=tuple(sentences))


_PARSE_POS = ("VERB", "NOUN", "PROPN", "DET", "ADJ", "ADV")
_PARSE_POS_PROBS = (0.15, 0.3, 0.1, 0.15, 0.15, 0.15)

_HEAD_AFFINITY = {
    "DET": {"NOUN": 6.0, "PROPN": 5.0},
    "ADJ": {"NOUN": 6.0, "PROPN": 3.0},
    "ADV": {"VERB": 6.0, "ADJ": 2.0},
    "NOUN": {"VERB": 5.0, "NOUN": 2.0, "PROPN": 1.0},
    "PROPN": {"VERB": 5.0, "NOUN": 2.0, "PROPN": 2.0},
    "VERB": {"VERB": 4.0},
}


def _dep_label(child_pos: str, head_pos: str, child_left_of_head: bool) -> str:
    if head_pos == "ROOT":
        return "root"
    if child_pos == "DET" and head_pos in ("NOUN", "PROPN"):
        return "det"
    if child_pos == "ADJ" and head_pos in ("NOUN", "PROPN"):
        return "amod"
    if child_pos == "ADV":
        return "advmod"
    if child_pos in ("NOUN", "PROPN") and head_pos == "VERB":
        return "nsubj" if child_left_of_head else "obj"
    if child_pos in ("NOUN", "PROPN") and head_pos in ("NOUN", "PROPN"):
        return "nmod"
    if child_pos == "VERB" and head_pos == "VERB":
        return "ccomp"
    if child_pos == "VERB":
        return "acl"
    return "dep"


ALL_DEP_LABELS = ("acl", "advmod", "amod", "ccomp", "dep", "det", "nmod", "nsubj", "obj", "root")


def _generate_parsing(spec: SyntheticSpec, rng) -> Corpus:
    """Heads attach to already-attached tokens with geometrically decaying
    distance weight times a POS affinity; exactly one token takes ROOT."""
    class_words = {}
    per = spec.vocab_size // len(_PARSE_POS)
    for c_idx, pos in enumerate(_PARSE_POS):
        class_words[pos] = np.arange(c_idx * per, (c_idx + 1) * per)

    sentences = []
    for s_idx in range(spec.num_sentences):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        pos_seq = [
            _PARSE_POS[int(rng.choice(len(_PARSE_POS), p=_PARSE_POS_PROBS))]
            for _ in range(n)
        ]
        forms = [f"w{int(rng.choice(class_words[p]))}" for p in pos_seq]
        root = next((i for i, p in enumerate(pos_seq) if p == "VERB"), 0)
        heads = [0] * n
        attached = [root]
        for i in range(n):
            if i == root:
                continue
            weights = []
            for j in attached:
                aff = _HEAD_AFFINITY[pos_seq[i]].get(pos_seq[j], 0.2)
                weights.append(aff * 0.65 ** abs(i - j))
            weights = np.array(weights)
            if spec.noise > 0.0 and rng.random() < spec.noise:
                pick = int(rng.choice(len(attached), p=weights / weights.sum()))
            else:
                pick = int(np.argmax(weights))
            heads[i] = attached[pick] + 1
            attached.append(i)
        tokens = []
        for i, (form, pos) in enumerate(zip(forms, pos_seq)):
            head = heads[i]
            head_pos = "ROOT" if head == 0 else pos_seq[head - 1]
            label = _dep_label(pos, head_pos, child_left_of_head=(i + 1) < head)
            if spec.noise > 0.0 and rng.random() < spec.noise:
                label = ALL_DEP_LABELS[int(rng.integers(0, len(ALL_DEP_LABELS)))]
            tokens.append(Token(form=form, pos=pos, gold_head=head, gold_deplabel=label))
        sentence = Sentence(id=f"s{s_idx}", tokens=tuple(tokens))
        validate_sentence(sentence, "parsing")
        sentences.append(sentence)
    return Corpus(task="parsing", sentences=tuple(sentences))


def generate_synthetic(spec: SyntheticSpec, rng_seed: int) -> Corpus:
    rng = np.random.default_rng(rng_seed)
    if spec.task == "tagging":
        return _generate_tagging(spec, rng)
    return _generate_parsing(spec, rng)


# ---------------------------------------------------------------------------
# Annotation simulation and cost model


def simulate_annotation(sentence: Sentence, queried: set[int], task: str) -> AnnotationState:
    """Reveal gold values at the queried positions.  For tagging, a query
    inside a mention reveals the whole span; queried O positions reveal only
    themselves."""
    n = len(sentence)
    for q in queried:
        if not 0 <= q < n:
            raise ValidationError(f"queried position {q} outside sentence")
    if task == "tagging":
        tags = [t.gold_tag for t in sentence.tokens]
        revealed = set()
        spans = tag_spans(tags)
        for q in queried:
            covering = [s for s in spans if s[0] <= q < s[1]]
            if covering:
                start, end, _ = covering[0]
                revealed.update(range(start, end))
            else:
                revealed.add(q)
        constraints = [
            frozenset({tags[i]}) if i in revealed else None for i in range(n)
        ]
    elif task == "parsing":
        revealed = set(queried)
        constraints = [
            frozenset({sentence.tokens[i].gold_head}) if i in revealed else None
            for i in range(n)
        ]
    else:
        raise ValidationError(f"unknown task {task!r}")
    mask = [i in revealed for i in range(n)]
    return AnnotationState.from_constraints(constraints, mask)


def full_annotation(sentence: Sentence, task: str) -> AnnotationState:
    return simulate_annotation(sentence, set(range(len(sentence))), task)


def count_labeling_cost(
    sentence: Sentence,
    annotation: AnnotationState | None,
    task: str,
    mode: str,
    pos_cost_set: frozenset = DEFAULT_POS_COST_SET,
    parsing_count_edges: bool = False,
) -> float:
    """FA tagging cost counts POS-filtered tokens of the whole sentence; PA
    tagging cost counts annotated tokens.  Parsing cost sums head-modifier
    surface distance (a ROOT edge costs the dependent's 1-based index), or
    simply counts annotated edges when ``parsing_count_edges`` is set."""
    if mode not in ("FA", "PA"):
        raise ValidationError(f"unknown cost mode {mode!r}")
    n = len(sentence)
    if task == "tagging":
        if mode == "FA":
            return float(sum(1 for t in sentence.tokens if t.pos in pos_cost_set))
        if annotation is None:
            return 0.0
        return float(sum(annotation.annotated_mask))
    if task == "parsing":
        if mode == "FA":
            positions = range(n)
        else:
            positions = [] if annotation is None else sorted(annotation.annotated_positions)
        if parsing_count_edges:
            return float(len(list(positions)))
        total = 0
        for i in positions:
            total += abs((i + 1) - sentence.tokens[i].gold_head)
        return float(total)
    raise ValidationError(f"unknown task {task!r}")


def corpus_labels(corpus: Corpus) -> list[str]:
    """Sorted label inventory: BIO tags for tagging, dependency labels for
    parsing."""
    labels = set()
    for sentence in corpus:
        for tok in sentence.tokens:
            labels.add(tok.gold_tag if corpus.task == "tagging" else tok.gold_deplabel)
    return sorted(labels)
