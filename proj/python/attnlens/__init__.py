"""Attention attribution for toy ViT/Swin transformers."""

from ._core import (
    AttnlensError,
    Model,
    ModelConfig,
    binarize,
    block_update,
    evaluate_segmentation,
    fuse_heads,
    load_config,
    load_image,
    load_weights,
    make_synthetic_dataset,
    merge_rows,
    perturb_image,
    perturbation_curve,
    random_weights,
    save_weights,
    scale_by_token_std,
    seg_metrics,
    selftest,
    sum_normalize,
    trapezoid_auc,
    upsample,
)

__all__ = [
    "AttnlensError",
    "Model",
    "ModelConfig",
    "binarize",
    "block_update",
    "evaluate_segmentation",
    "fuse_heads",
    "load_config",
    "load_image",
    "load_weights",
    "make_synthetic_dataset",
    "merge_rows",
    "perturb_image",
    "perturbation_curve",
    "random_weights",
    "save_weights",
    "scale_by_token_std",
    "seg_metrics",
    "selftest",
    "sum_normalize",
    "trapezoid_auc",
    "upsample",
]
