"""Active learning with partial annotation and self-training for structured
prediction: exact CRF inference over chains and trees, adaptive sub-structure
selection driven by a one-dimensional error estimator, knowledge-distillation
self-training, a pipelined IE variant, and a simulation CLI with reporting.
"""

from .chain_crf import (
    ChainGrad,
    ChainMarginals,
    ChainScores,
    ConstraintMask,
    kd_loss,
    log_partition,
    marginals,
    nll_full,
    nll_partial,
    viterbi,
)
from .corpus import (
    AnnotationState,
    Corpus,
    Sentence,
    SyntheticSpec,
    Token,
    corpus_labels,
    count_labeling_cost,
    full_annotation,
    generate_synthetic,
    load_column_tagging,
    load_conllu,
    simulate_annotation,
    write_column_tagging,
    write_conllu,
)
from .errors import (
    AlpsError,
    ConfigError,
    ConstraintError,
    NumericalError,
    ParseError,
    TrainingError,
    ValidationError,
)
from .estimator import (
    CorrectnessSample,
    LogisticModel,
    adaptive_ratio,
    collect_dev_samples,
    fit_logistic,
)
from .evaluation import EvalReport, attachment_scores, span_prf, token_accuracy
from .ie import (
    IECorpus,
    IEOptions,
    IESentence,
    Mention,
    SyntheticIESpec,
    evaluate_ie,
    generate_synthetic_ie,
    load_ie_jsonl,
    run_ie_experiment,
    write_ie_jsonl,
)
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
from .reporting import load_runs, render_curves, write_run_manifest
from .selector import (
    ALConfig,
    partial_select,
    run_experiment,
    run_seed,
    sentence_query,
)
from .tree_crf import (
    ArcMarginals,
    ArcScores,
    HeadConstraint,
    decode_tree,
    mt_arc_marginals,
    mt_log_partition,
    tree_kd_loss,
    tree_nll_full,
    tree_nll_partial,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
