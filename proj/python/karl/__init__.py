"""Active-learning engine for item relation labels."""

from ._karl import (
    ConfigError,
    CorruptCheckpoint,
    InvalidArgument,
    KarlError,
    LeakageError,
    ParseError,
    TransportError,
    UnparseableResponse,
    cli,
    config_keys,
    diversity,
    generate_world,
    macro_f1,
    map_to_rel3,
    margin_score,
    parse_label,
    pearson,
    qbc_score,
    resume,
    run,
    swap_direction,
    unanimous,
)

__all__ = [
    "ConfigError",
    "CorruptCheckpoint",
    "InvalidArgument",
    "KarlError",
    "LeakageError",
    "ParseError",
    "TransportError",
    "UnparseableResponse",
    "cli",
    "config_keys",
    "diversity",
    "generate_world",
    "macro_f1",
    "map_to_rel3",
    "margin_score",
    "parse_label",
    "pearson",
    "qbc_score",
    "resume",
    "run",
    "swap_direction",
    "unanimous",
]
