"""Python access to the memory-bank compression core."""

from ._core import (
    Session,
    canonical_config,
    codebook_perplexity,
    default_config,
    exact_match,
    footprint,
    gen_synthetic,
    init_codebook,
    mean_token_f1,
    nearest_codes,
    normalize_answer,
    parameter_delta,
    token_f1,
)

__all__ = [
    "Session",
    "canonical_config",
    "codebook_perplexity",
    "default_config",
    "exact_match",
    "footprint",
    "gen_synthetic",
    "init_codebook",
    "mean_token_f1",
    "nearest_codes",
    "normalize_answer",
    "parameter_delta",
    "token_f1",
]
