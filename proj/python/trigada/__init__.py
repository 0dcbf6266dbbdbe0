"""Event-trigger tagging with adversarial domain adaptation.

The heavy lifting lives in the compiled ``_trigada`` extension; this package
re-exports it and adds a couple of conveniences.
"""

from ._trigada import (
    CONFIG_SCHEMA_VERSION,
    Corpus,
    ModelConfig,
    Resources,
    RuntimeFailure,
    SyntheticSpec,
    TaggerModel,
    TrainConfig,
    ValidationError,
    __version__,
    compute_stats,
    config_schema,
    display_pct,
    domain_accuracy,
    evaluate,
    f1_score,
    filter_unrealized_events,
    finetune,
    finetune_curve,
    load_corpus,
    make_corpus,
    make_synthetic_pair,
    resources_from_vectors,
    resources_from_word2vec,
    run_command,
    sample_labeled_fraction,
    score,
    self_train,
    split_corpus,
    train_ada,
    train_feda,
    train_supervised,
    write_corpus,
)


def synthetic_setup(seed=1, spec=None, fractions=(0.8, 0.1, 0.1)):
    """Split synthetic source/target corpora and matching resources for one seed."""
    source, target, vectors = make_synthetic_pair(spec or SyntheticSpec(), seed)
    source = split_corpus(source, list(fractions), seed)
    target = split_corpus(target, list(fractions), seed)
    return source, target, resources_from_vectors(source, target, vectors, seed)


__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
