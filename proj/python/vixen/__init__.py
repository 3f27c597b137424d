"""Image-difference captioning: metrics, fusion, dataset helpers and a toy training loop."""

from ._core import (
    ConfigError,
    DimensionError,
    Error,
    bleu4,
    build_fewshot_prompt,
    caption,
    cider_d,
    embed,
    evaluate,
    filter_min_score,
    fuse,
    fused_length,
    meteor_lite,
    metric_tokens,
    parse_manifest,
    porter_stem,
    project,
    rouge_l,
    score_stats,
    semantic_similarity,
    synthesize_pairs,
    train_synthetic,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "Error",
    "bleu4",
    "build_fewshot_prompt",
    "caption",
    "cider_d",
    "embed",
    "evaluate",
    "filter_min_score",
    "fuse",
    "fused_length",
    "meteor_lite",
    "metric_tokens",
    "parse_manifest",
    "porter_stem",
    "project",
    "rouge_l",
    "score_stats",
    "semantic_similarity",
    "synthesize_pairs",
    "train_synthetic",
]
