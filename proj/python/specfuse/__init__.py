from ._core import (
    BPEVocab,
    ConfigError,
    DataError,
    DiffusionSchedule,
    NumericError,
    build_vocab,
    detokenize,
    eot_id,
    evaluate_map,
    forward_diffuse,
    make_schedule,
    max_tokens,
    metrics_from_confusion,
    pad_id,
    run_cli,
    sot_id,
    tokenize,
)

__all__ = [
    "BPEVocab",
    "ConfigError",
    "DataError",
    "DiffusionSchedule",
    "NumericError",
    "build_vocab",
    "detokenize",
    "eot_id",
    "evaluate_map",
    "forward_diffuse",
    "make_schedule",
    "max_tokens",
    "metrics_from_confusion",
    "pad_id",
    "run_cli",
    "sot_id",
    "tokenize",
]
