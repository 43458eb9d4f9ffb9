"""Patient-independent EEG seizure prediction toolkit."""

from ._core import (
    ConfigError,
    Model,
    NumericError,
    ParseError,
    bce,
    cce,
    channel_shapley,
    compute_metrics,
    contrastive,
    kl_divergence,
    kl_map,
    load_checkpoint,
    load_recording,
    make_model,
    mfcc,
    parse_summary,
    roc_auc,
    run_cli,
    shapley_exact,
    shapley_permutation,
    smooth_and_threshold,
)

__all__ = [
    "ConfigError",
    "Model",
    "NumericError",
    "ParseError",
    "bce",
    "cce",
    "channel_shapley",
    "compute_metrics",
    "contrastive",
    "kl_divergence",
    "kl_map",
    "load_checkpoint",
    "load_recording",
    "make_model",
    "mfcc",
    "parse_summary",
    "roc_auc",
    "run_cli",
    "shapley_exact",
    "shapley_permutation",
    "smooth_and_threshold",
]
