"""Command-line front end.

Three subcommands:

* ``simulate --config FILE [--seed-filter K]`` runs an experiment from a
  flat key=value config file, writing per-seed cycle records, an
  aggregate CSV, and a run manifest under the configured output
  directory.  Completed seeds are skipped on re-run.
* ``report DIR [DIR ...] --out DIR`` renders the learning curves of one
  or more finished runs (metric against reading cost and against
  labeling cost, one curve per run, ±1 std shading) to SVG plus a CSV of
  the plotted points.
* ``evaluate --params FILE --data FILE --task T`` scores a saved model
  on a data file and prints the metrics as JSON.

Config grammar: one ``key = value`` per line; ``#`` starts a comment;
blank lines are ignored.  Booleans are ``true``/``false``; lists are
comma-separated.  ``seeds`` accepts either a count (``5`` means seeds
0..4) or an explicit comma list (``0,3,`` trailing comma allowed).
Unknown keys and invalid values are rejected with the key named in the
message and exit code 2.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field

from .corpus import (
    SyntheticSpec,
    generate_synthetic,
    load_column_tagging,
    load_conllu,
)
from .errors import AlpsError, ConfigError
from .evaluation import EvalReport, attachment_scores, span_prf
from .ie import (
    IEOptions,
    SyntheticIESpec,
    evaluate_ie,
    generate_synthetic_ie,
    load_ie_jsonl,
    load_ie_model,
    run_ie_experiment,
)
from .learner import ParameterStore, predict_tags, predict_tree
from .reporting import load_runs, render_curves, write_run_manifest
from .selector import ALConfig, TrainConfig, run_experiment

TASKS = ("tagging", "parsing", "ie")

# key -> (value kind, where it lands)
_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False}

_AL_KEYS = {
    "strategy": str,
    "self_training": bool,
    "acquisition": str,
    "batch_tokens": int,
    "cycles": int,
    "ratio_mode": str,
    "fixed_ratio": float,
    "r_min": float,
    "r_max": float,
    "test_tokens": int,
}

_TRAIN_KEYS = {
    "steps": int,
    "minibatch_tokens": int,
    "learning_rate": float,
    "l2": float,
    "eval_every": int,
    "mix_gold": int,
    "mix_pseudo": int,
    "table_size": int,
}

_SYNTH_KEYS = {
    "synthetic_sentences": ("num_sentences", int),
    "synthetic_vocab": ("vocab_size", int),
    "synthetic_entity_types": ("entity_types", "strlist"),
    "synthetic_min_len": ("min_len", int),
    "synthetic_max_len": ("max_len", int),
    "synthetic_noise": ("noise", float),
}

_SYNTH_IE_KEYS = {
    "synthetic_relation_labels": ("relation_labels", "strlist"),
    "synthetic_max_gap": ("max_gap", int),
    "synthetic_drop": ("drop", float),
}

_IE_OPTION_KEYS = {
    "beta": float,
    "fa_relation_cost": str,
    "strict_match": bool,
}

_TOP_KEYS = {
    "task": str,
    "out": str,
    "data": str,
    "test_data": str,
    "synthetic": bool,
    "synthetic_seed": int,
    "seeds": "seeds",
}


@dataclass(frozen=True)
class RunSpec:
    """A fully resolved simulate invocation: the task, where the data
    comes from, the run configuration, and the output directory."""

    task: str
    out: str
    config: ALConfig
    data: str | None = None
    test_data: str | None = None
    synthetic: object | None = None
    synthetic_seed: int = 0
    ie_options: IEOptions = field(default_factory=IEOptions)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task: must be one of {', '.join(TASKS)}")
        if not self.out:
            raise ConfigError("out: an output directory is required")
        if (self.data is None) == (self.synthetic is None):
            raise ConfigError(
                "data: give a corpus path or set synthetic = true, not both"
            )


def _parse_scalar(key: str, kind, raw: str):
    if kind is bool:
        word = raw.lower()
        if word not in _BOOL_WORDS:
            raise ConfigError(f"{key}: expected true or false, got {raw!r}")
        return _BOOL_WORDS[word]
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if kind is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if kind == "strlist":
        items = tuple(part.strip() for part in raw.split(",") if part.strip())
        if not items:
            raise ConfigError(f"{key}: expected a comma-separated list")
        return items
    if kind == "seeds":
        if "," in raw:
            try:
                return tuple(int(part) for part in raw.split(",") if part.strip())
            except ValueError:
                raise ConfigError(f"{key}: expected integers, got {raw!r}") from None
        count = _parse_scalar(key, int, raw)
        if count < 1:
            raise ConfigError(f"{key}: need at least one seed")
        return tuple(range(count))
    return raw


def parse_config_text(text: str, source: str = "<config>") -> RunSpec:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if not key or not raw:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        if key in values:
            raise ConfigError(f"{key}: duplicate key (line {lineno})")
        for table in (_TOP_KEYS, _AL_KEYS, _TRAIN_KEYS, _IE_OPTION_KEYS):
            if key in table:
                values[key] = _parse_scalar(key, table[key], raw)
                break
        else:
            if key in _SYNTH_KEYS:
                name, kind = _SYNTH_KEYS[key]
                values[key] = (name, _parse_scalar(key, kind, raw))
            elif key in _SYNTH_IE_KEYS:
                name, kind = _SYNTH_IE_KEYS[key]
                values[key] = (name, _parse_scalar(key, kind, raw))
            else:
                raise ConfigError(f"unknown config key {key!r}")

    task = values.get("task")
    if task is None:
        raise ConfigError("task: required (tagging, parsing, or ie)")
    if task not in TASKS:
        raise ConfigError(f"task: must be one of {', '.join(TASKS)}")

    if task != "ie":
        for key in (*_IE_OPTION_KEYS, *_SYNTH_IE_KEYS):
            if key in values:
                raise ConfigError(f"{key}: only valid for task ie")

    train = TrainConfig(
        **{key: values[key] for key in _TRAIN_KEYS if key in values}
    )
    al_kwargs = {key: values[key] for key in _AL_KEYS if key in values}
    if "seeds" in values:
        al_kwargs["seeds"] = values["seeds"]
    config = ALConfig(train=train, **al_kwargs)

    synthetic = None
    if values.get("synthetic"):
        synth_kwargs = {}
        for key in (*_SYNTH_KEYS, *_SYNTH_IE_KEYS):
            if key in values:
                name, value = values[key]
                synth_kwargs[name] = value
        if task == "ie":
            synthetic = SyntheticIESpec(**synth_kwargs)
        else:
            synthetic = SyntheticSpec(task=task, **synth_kwargs)
    elif any(key in values for key in (*_SYNTH_KEYS, *_SYNTH_IE_KEYS, "synthetic_seed")):
        raise ConfigError("synthetic: set synthetic = true to use generator keys")

    ie_options = IEOptions(
        **{key: values[key] for key in _IE_OPTION_KEYS if key in values}
    )

    return RunSpec(
        task=task,
        out=values.get("out", ""),
        config=config,
        data=values.get("data"),
        test_data=values.get("test_data"),
        synthetic=synthetic,
        synthetic_seed=values.get("synthetic_seed", 0),
        ie_options=ie_options,
    )


def parse_config_file(path) -> RunSpec:
    if not os.path.exists(path):
        raise ConfigError(f"config: no such file {path!r}")
    with open(path, encoding="utf-8") as handle:
        return parse_config_text(handle.read(), source=str(path))


def _load_data(task: str, path):
    if not os.path.exists(path):
        raise ConfigError(f"data: no such file {path!r}")
    if task == "tagging":
        return load_column_tagging(path)
    if task == "parsing":
        return load_conllu(path)
    return load_ie_jsonl(path)


def _resolve_corpora(spec: RunSpec):
    if spec.synthetic is not None:
        if spec.task == "ie":
            corpus = generate_synthetic_ie(spec.synthetic, spec.synthetic_seed)
        else:
            corpus = generate_synthetic(spec.synthetic, spec.synthetic_seed)
    else:
        corpus = _load_data(spec.task, spec.data)
    test_corpus = None
    if spec.test_data is not None:
        test_corpus = _load_data(spec.task, spec.test_data)
    return corpus, test_corpus


def cmd_simulate(args) -> int:
    spec = parse_config_file(args.config)
    corpus, test_corpus = _resolve_corpora(spec)
    os.makedirs(spec.out, exist_ok=True)
    write_run_manifest(
        spec.out, spec.task, spec.config.strategy, spec.config.self_training
    )
    if spec.task == "ie":
        per_seed = run_ie_experiment(
            spec.config,
            corpus,
            test_corpus,
            out_dir=spec.out,
            resume=True,
            seed_filter=args.seed_filter,
            options=spec.ie_options,
        )
    else:
        per_seed = run_experiment(
            spec.config,
            corpus,
            test_corpus,
            out_dir=spec.out,
            resume=True,
            seed_filter=args.seed_filter,
        )
    cycles = {seed: len(records) for seed, records in sorted(per_seed.items())}
    print(f"{spec.out}: ran seeds {sorted(per_seed)} with cycles {cycles}")
    return 0


def cmd_report(args) -> int:
    runs = load_runs(args.dirs)
    created = render_curves(runs, args.out)
    for path in created:
        print(path)
    return 0


def cmd_evaluate(args) -> int:
    if not os.path.exists(args.data):
        raise ConfigError(f"data: no such file {args.data!r}")
    if not os.path.exists(args.params):
        raise ConfigError(f"params: no such file {args.params!r}")
    if args.task == "ie":
        mention, relation = load_ie_model(args.params)
        corpus = load_ie_jsonl(args.data)
        metrics = evaluate_ie(mention, relation, corpus.sentences)
    else:
        params = ParameterStore.load(args.params)
        if params.task != args.task:
            raise ConfigError(
                f"params: snapshot is for task {params.task!r}, not {args.task!r}"
            )
        corpus = _load_data(args.task, args.data)
        if args.task == "tagging":
            gold = [[t.gold_tag for t in s.tokens] for s in corpus]
            pred = [predict_tags(params, s) for s in corpus]
            precision, recall, f1 = span_prf(gold, pred)
            metrics = {"precision": precision, "recall": recall, "f1": f1}
        else:
            gold_heads = [[t.gold_head for t in s.tokens] for s in corpus]
            gold_labels = [[t.gold_deplabel for t in s.tokens] for s in corpus]
            pred_heads, pred_labels = [], []
            for sentence in corpus:
                heads, labels = predict_tree(params, sentence)
                pred_heads.append(list(heads))
                pred_labels.append(labels)
            uas, las = attachment_scores(
                gold_heads, pred_heads, gold_labels, pred_labels
            )
            metrics = {"uas": uas, "las": las}
    report = EvalReport(task=args.task, metrics=metrics)
    print(json.dumps({"task": report.task, **report.metrics}, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alps",
        description="Active learning simulations for structured prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run an experiment from a config file")
    p_sim.add_argument("--config", required=True, help="key = value config file")
    p_sim.add_argument(
        "--seed-filter",
        type=int,
        default=None,
        help="run only this experiment seed",
    )
    p_sim.set_defaults(func=cmd_simulate)

    p_rep = sub.add_parser("report", help="render learning curves for finished runs")
    p_rep.add_argument("dirs", nargs="+", help="simulate output directories")
    p_rep.add_argument("--out", required=True, help="directory for SVG and CSV output")
    p_rep.set_defaults(func=cmd_report)

    p_eval = sub.add_parser("evaluate", help="score a saved model on a data file")
    p_eval.add_argument("--params", required=True, help="model snapshot path")
    p_eval.add_argument("--data", required=True, help="data file path")
    p_eval.add_argument("--task", required=True, choices=TASKS)
    p_eval.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AlpsError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
