"""Python access to the specforge checkpoint, training-objective, routing and corpus code."""

from ._specforge import (
    Checkpoint,
    ConfigError,
    Error,
    FormatError,
    IncompatibleError,
    apply_residual,
    blake3_hex,
    build_classification_prompt,
    clean_text,
    count_tokens,
    dpo_loss,
    extract_residual,
    parse_category,
    percentile_nearest_rank,
    redact_pii,
    route_query,
    subspace_diagnostics,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "Error",
    "FormatError",
    "IncompatibleError",
    "apply_residual",
    "blake3_hex",
    "build_classification_prompt",
    "clean_text",
    "count_tokens",
    "dpo_loss",
    "extract_residual",
    "parse_category",
    "percentile_nearest_rank",
    "redact_pii",
    "route_query",
    "subspace_diagnostics",
]
