"""Active-learning orchestration: uncertainty-ranked sentence queries under a
token budget, full/partial/random annotation arms, adaptive ratio wiring,
self-training rounds, cost accounting, and per-cycle records.

Everything here is deterministic given the experiment seed: pools are always
iterated in sorted id order, per-seed randomness comes from one Generator,
and cycle records serialize with sorted keys so reruns are byte-identical.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .chain_crf import marginals, token_entropies, token_least_confidence, token_margins
from .corpus import (
    PARTIAL,
    Corpus,
    PoolState,
    Sentence,
    corpus_labels,
    count_labeling_cost,
    full_annotation,
    simulate_annotation,
)
from .errors import ConfigError, ValidationError
from .estimator import adaptive_ratio, collect_dev_samples, fit_logistic
from .evaluation import attachment_scores, span_prf, token_accuracy
from .learner import (
    FeatureCache,
    ParameterStore,
    TrainConfig,
    make_pseudo_labels,
    predict_tags,
    predict_tree,
    score,
    train,
)
from .tree_crf import head_entropies, head_least_confidence, head_margins, mt_arc_marginals

STRATEGIES = ("RAND", "FA", "PA")
ACQUISITIONS = ("margin", "least-confidence", "entropy")
RATIO_MODES = ("adaptive", "fixed")


@dataclass(frozen=True)
class ALConfig:
    strategy: str = "FA"
    self_training: bool = False
    acquisition: str = "margin"
    batch_tokens: int = 4000
    cycles: int = 14
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    ratio_mode: str = "adaptive"
    fixed_ratio: float = 1.0
    r_min: float = 0.02
    r_max: float = 0.98
    test_tokens: int | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.acquisition not in ACQUISITIONS:
            raise ConfigError(f"unknown acquisition {self.acquisition!r}")
        if self.ratio_mode not in RATIO_MODES:
            raise ConfigError(f"unknown ratio_mode {self.ratio_mode!r}")
        if self.batch_tokens <= 0:
            raise ConfigError("batch_tokens must be positive")
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed required")
        if self.ratio_mode == "fixed" and not 0.0 < self.fixed_ratio <= 1.0:
            raise ConfigError("fixed_ratio must be in (0, 1]")
        if not 0.0 <= self.r_min <= self.r_max <= 1.0:
            raise ConfigError("need 0 <= r_min <= r_max <= 1")


@dataclass(frozen=True)
class SentenceInference:
    """Cached per-sentence inference pass: margins and predictions feed both
    selection and error accounting."""

    margins: np.ndarray
    uncertainty: np.ndarray
    predicted: np.ndarray


def infer_sentence(
    params: ParameterStore,
    sentence: Sentence,
    acquisition: str = "margin",
    cache: FeatureCache | None = None,
) -> SentenceInference:
    scores = score(params, sentence, cache)
    if params.task == "tagging":
        marg = marginals(scores)
        margins = token_margins(marg)
        predicted = marg.unary.argmax(axis=1)
        if acquisition == "margin":
            uncertainty = 1.0 - margins
        elif acquisition == "least-confidence":
            uncertainty = token_least_confidence(marg)
        else:
            uncertainty = token_entropies(marg)
    else:
        marg = mt_arc_marginals(scores)
        margins = head_margins(marg)
        predicted = marg.probabilities.argmax(axis=0)
        if acquisition == "margin":
            uncertainty = 1.0 - margins
        elif acquisition == "least-confidence":
            uncertainty = head_least_confidence(marg)
        else:
            uncertainty = head_entropies(marg)
    return SentenceInference(margins, uncertainty, predicted)


def sentence_query(
    params: ParameterStore | None,
    sentences,
    batch_tokens: int,
    acquisition: str = "margin",
    cache: FeatureCache | None = None,
    rng: np.random.Generator | None = None,
):
    """Greedy budget fill: sentences ranked by mean sub-structure uncertainty
    (random order when ``rng`` is given), taken until the cumulative token
    count reaches ``batch_tokens`` or the pool runs out.

    Returns (selected sentences, {sentence id: SentenceInference}); the
    inference map covers the ranked pool only when a model did the ranking.
    """
    sentences = list(sentences)
    if not sentences:
        raise ValidationError("empty pool")
    infer_map: dict[str, SentenceInference] = {}
    if rng is not None:
        order = [sentences[i] for i in rng.permutation(len(sentences))]
    else:
        if params is None:
            raise ConfigError("uncertainty ranking requires a model")
        ranked = []
        for s in sentences:
            info = infer_sentence(params, s, acquisition, cache)
            infer_map[s.id] = info
            ranked.append((-float(info.uncertainty.mean()), s.id, s))
        ranked.sort(key=lambda row: (row[0], row[1]))
        order = [s for _, _, s in ranked]
    selected, tokens = [], 0
    for s in order:
        if tokens >= batch_tokens:
            break
        selected.append(s)
        tokens += len(s)
    return selected, infer_map


def partial_select(entries, r: float) -> dict[str, set[int]]:
    """Union of per-sentence and global ratio picks.

    entries: ordered (sentence id, margins) pairs for the selected batch.
    Per sentence, the ceil(r * n_i) smallest margins; globally, the
    ceil(r * sum n_i) smallest across the batch; ties break by (sentence id,
    position).
    """
    entries = [(sid, np.asarray(m, dtype=np.float64)) for sid, m in entries]
    if not entries:
        raise ValidationError("empty selection batch")
    if not 0.0 < r <= 1.0:
        raise ValidationError(f"ratio {r} outside (0, 1]")
    chosen: dict[str, set[int]] = {sid: set() for sid, _ in entries}
    pool = []
    for sid, margins in entries:
        take = math.ceil(r * len(margins))
        for pos in np.argsort(margins, kind="stable")[:take]:
            chosen[sid].add(int(pos))
        pool.extend((float(m), sid, int(pos)) for pos, m in enumerate(margins))
    pool.sort()
    total = sum(len(m) for _, m in entries)
    for margin, sid, pos in pool[: math.ceil(r * total)]:
        chosen[sid].add(pos)
    return chosen


@dataclass
class ALState:
    """Everything one seed's run carries between cycles."""

    config: ALConfig
    corpus: Corpus
    test: tuple[Sentence, ...]
    labels: tuple[str, ...]
    pool: PoolState
    seed_states: dict
    cache: FeatureCache
    rng: np.random.Generator
    experiment_seed: int
    params: ParameterStore | None = None
    cycle_index: int = 0
    cum_reading: int = 0
    cum_labeling: float = 0.0
    cum_labeling_alt: float = 0.0

    @property
    def task(self) -> str:
        return self.corpus.task


def _take_tokens(sentences, rng: np.random.Generator, target_tokens: int):
    """Random sentences until the token target is crossed; returns (taken,
    rest) preserving the input order within each part."""
    order = rng.permutation(len(sentences))
    taken_ids = set()
    tokens = 0
    for i in order:
        if tokens >= target_tokens:
            break
        taken_ids.add(i)
        tokens += len(sentences[i])
    taken = [s for i, s in enumerate(sentences) if i in taken_ids]
    rest = [s for i, s in enumerate(sentences) if i not in taken_ids]
    return taken, rest


def init_seed_run(
    config: ALConfig,
    corpus: Corpus,
    experiment_seed: int,
    test_corpus: Corpus | None = None,
) -> ALState:
    """Split off test (unless given), seed, and dev sets; fully annotate the
    seed set and train the initial model on it."""
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
    task = corpus.task
    pool = PoolState(
        seed={s.id for s in seed_sents},
        dev={s.id for s in dev_sents},
        labeled={},
        unlabeled={s.id for s in sentences},
        budget_remaining=config.cycles * config.batch_tokens,
    )
    pool.check()
    state = ALState(
        config=config,
        corpus=corpus,
        test=tuple(test),
        labels=tuple(),
        pool=pool,
        seed_states={s.id: full_annotation(s, task) for s in seed_sents},
        cache=FeatureCache(task),
        rng=rng,
        experiment_seed=experiment_seed,
    )
    labels = corpus_labels(corpus)
    if test_corpus is not None:
        extra = corpus_labels(test_corpus)
        labels = sorted(set(labels) | set(extra))
    state.labels = tuple(labels)
    state.params = _train_models(state)
    return state


def _gold_items(state: ALState):
    items = [
        (state.corpus[sid], state.seed_states[sid]) for sid in sorted(state.pool.seed)
    ]
    items += [
        (state.corpus[sid], state.pool.labeled[sid])
        for sid in sorted(state.pool.labeled)
    ]
    return items


def _dev_sentences(state: ALState):
    return [state.corpus[sid] for sid in sorted(state.pool.dev)]


def _train_models(state: ALState) -> ParameterStore:
    """Gold-only model; with self-training on, a second model distilled from
    the first becomes the round's output."""
    gold = _gold_items(state)
    dev = _dev_sentences(state)
    base_seed = state.experiment_seed * 100_000 + state.cycle_index * 10
    first = train(
        gold, dev, state.config.train, state.task, state.labels,
        rng_seed=base_seed, cache=state.cache,
    )
    if not state.config.self_training:
        return first.params
    targets = []
    for sid in sorted(state.pool.labeled):
        if state.pool.labeled[sid].status == PARTIAL:
            targets.append((state.corpus[sid], state.pool.labeled[sid]))
    for sid in sorted(state.pool.unlabeled):
        targets.append((state.corpus[sid], None))
    if not targets:
        return first.params
    pseudo = make_pseudo_labels(first.params, targets, state.cache)
    second = train(
        gold, dev, state.config.train, state.task, state.labels,
        rng_seed=base_seed + 1, cache=state.cache,
        pseudo=pseudo, pseudo_items=[s for s, _ in targets],
    )
    return second.params


def _evaluate(state: ALState, sentences) -> dict:
    if state.task == "tagging":
        golds = [[t.gold_tag for t in s.tokens] for s in sentences]
        preds = [predict_tags(state.params, s, state.cache) for s in sentences]
        precision, recall, f1 = span_prf(golds, preds)
        return {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "token_accuracy": token_accuracy(golds, preds),
        }
    gold_heads, pred_heads, gold_labels, pred_labels = [], [], [], []
    for s in sentences:
        heads, labs = predict_tree(state.params, s, state.cache)
        gold_heads.append([t.gold_head for t in s.tokens])
        gold_labels.append([t.gold_deplabel for t in s.tokens])
        pred_heads.append(list(heads))
        pred_labels.append(labs)
    uas, las = attachment_scores(gold_heads, pred_heads, gold_labels, pred_labels)
    return {"uas": uas, "las": las}


def _gold_substructure(state: ALState, sentence: Sentence, i: int) -> int:
    if state.task == "tagging":
        return state.labels.index(sentence.tokens[i].gold_tag)
    return sentence.tokens[i].gold_head


def run_cycle(state: ALState):
    """One AL round: query, annotate, retrain, evaluate.  Returns the cycle's
    record dict, or None when the pool is already empty (early stop)."""
    config = state.config
    if not state.pool.unlabeled:
        return None
    if state.pool.budget_remaining <= 0:
        raise ValidationError("no budget remaining")
    state.cycle_index += 1
    pool_sents = [state.corpus[sid] for sid in sorted(state.pool.unlabeled)]
    rng = state.rng if config.strategy == "RAND" else None
    selected, infer_map = sentence_query(
        state.params, pool_sents, config.batch_tokens,
        acquisition=config.acquisition, cache=state.cache, rng=rng,
    )
    for s in selected:
        if s.id not in infer_map:
            infer_map[s.id] = infer_sentence(state.params, s, config.acquisition, state.cache)

    q_margins = np.concatenate([infer_map[s.id].margins for s in selected])
    q_gold = [
        _gold_substructure(state, s, i) for s in selected for i in range(len(s))
    ]
    q_pred = np.concatenate([infer_map[s.id].predicted for s in selected])
    actual_error = float(np.mean(q_pred != np.asarray(q_gold)))

    ratio = 1.0
    estimated_error = None
    if config.strategy == "PA":
        if config.ratio_mode == "adaptive":
            samples = collect_dev_samples(
                state.params, _dev_sentences(state), state.task, state.cache
            )
            model = fit_logistic(samples)
            estimated_error = 1.0 - float(model.predict(np.sort(q_margins)).mean())
            ratio = adaptive_ratio(model, q_margins, config.r_min, config.r_max)
        else:
            ratio = config.fixed_ratio
        positions = partial_select(
            [(s.id, infer_map[s.id].margins) for s in selected], ratio
        )
        annotations = {
            s.id: simulate_annotation(s, positions[s.id], state.task) for s in selected
        }
    else:
        annotations = {s.id: full_annotation(s, state.task) for s in selected}

    reading = sum(len(s) for s in selected)
    labeling = labeling_alt = 0.0
    annotated_count = 0
    for s in selected:
        ann = annotations[s.id]
        mode = "PA" if config.strategy == "PA" else "FA"
        labeling += count_labeling_cost(s, ann, state.task, mode)
        if state.task == "tagging":
            labeling_alt += len(s) if mode == "FA" else float(sum(ann.annotated_mask))
        else:
            labeling_alt += count_labeling_cost(
                s, ann, state.task, mode, parsing_count_edges=True
            )
        annotated_count += sum(ann.annotated_mask)

    for s in selected:
        state.pool.unlabeled.discard(s.id)
        state.pool.labeled[s.id] = annotations[s.id]
    state.pool.budget_remaining -= config.batch_tokens
    state.pool.check()
    state.cum_reading += reading
    state.cum_labeling += labeling
    state.cum_labeling_alt += labeling_alt

    state.params = _train_models(state)
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
        "test": _evaluate(state, list(state.test)),
        "dev": _evaluate(state, _dev_sentences(state)),
    }
    return record


# ---------------------------------------------------------------------------
# Experiment driver and aggregation


def _record_path(seed_dir: str, cycle: int) -> str:
    return os.path.join(seed_dir, f"cycle{cycle}.json")


def write_record(seed_dir: str, record: dict) -> None:
    path = _record_path(seed_dir, record["cycle"])
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(record, handle, sort_keys=True, indent=2)
        handle.write("\n")


def _seed_done_path(seed_dir: str) -> str:
    return os.path.join(seed_dir, "done.json")


def load_seed_records(seed_dir: str) -> list[dict]:
    records = []
    cycle = 1
    while os.path.exists(_record_path(seed_dir, cycle)):
        with open(_record_path(seed_dir, cycle), encoding="utf-8") as handle:
            records.append(json.load(handle))
        cycle += 1
    return records


def run_seed(
    config: ALConfig,
    corpus: Corpus,
    experiment_seed: int,
    test_corpus: Corpus | None = None,
    seed_dir: str | None = None,
) -> list[dict]:
    state = init_seed_run(config, corpus, experiment_seed, test_corpus)
    records = []
    early_stop = False
    for _ in range(config.cycles):
        record = run_cycle(state)
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


_COST_FIELDS = (
    "reading_cost",
    "labeling_cost",
    "labeling_cost_alt",
    "ratio",
    "estimated_error",
    "actual_error",
    "queried_sentences",
    "annotated_substructures",
)


def _flatten(record: dict) -> dict:
    flat = {k: record[k] for k in _COST_FIELDS}
    for group in ("test", "dev"):
        for key in sorted(record[group]):
            flat[f"{group}_{key}"] = record[group][key]
    return flat


def aggregate_records(per_seed: dict) -> tuple[list[str], list[list]]:
    """Mean and population std per cycle across seeds; pure function of the
    record dicts.  Null metrics (e.g. ratio under FA) aggregate over the
    seeds that have them; empty cells when none do."""
    if not per_seed:
        raise ValidationError("no records to aggregate")
    max_cycles = max(len(records) for records in per_seed.values())
    sample = next(iter(per_seed.values()))[0]
    fields = list(_flatten(sample))
    header = ["cycle", "n_seeds"]
    for name in fields:
        header += [f"{name}_mean", f"{name}_std"]
    rows = []
    for cycle in range(1, max_cycles + 1):
        at_cycle = [
            _flatten(records[cycle - 1])
            for seed in sorted(per_seed)
            for records in [per_seed[seed]]
            if len(records) >= cycle
        ]
        row = [cycle, len(at_cycle)]
        for name in fields:
            values = [flat[name] for flat in at_cycle if flat[name] is not None]
            if values:
                arr = np.asarray(values, dtype=np.float64)
                row += [float(arr.mean()), float(arr.std())]
            else:
                row += ["", ""]
        rows.append(row)
    return header, rows


def _format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_aggregate_csv(path: str, per_seed: dict) -> None:
    header, rows = aggregate_records(per_seed)
    lines = [",".join(header)]
    lines += [",".join(_format_cell(cell) for cell in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("\n".join(lines) + "\n")


def run_experiment(
    config: ALConfig,
    corpus: Corpus,
    test_corpus: Corpus | None = None,
    out_dir: str | None = None,
    resume: bool = False,
    seed_filter: int | None = None,
) -> dict:
    """Run every configured seed (optionally restricted to one), write
    runs/<name>-style artifacts under ``out_dir``, and return the per-seed
    record lists.  With ``resume``, seeds whose directory carries a done
    marker are loaded instead of re-run."""
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
        per_seed[experiment_seed] = run_seed(
            config, corpus, experiment_seed, test_corpus, seed_dir
        )
    if out_dir is not None and per_seed:
        write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"), per_seed)
    return per_seed
