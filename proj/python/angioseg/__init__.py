"""Coronary vessel segmentation pipeline (C++ core)."""

from ._core import (
    Error,
    Model,
    allocate_validation,
    clahe,
    coco_to_masks,
    combo_loss,
    dataset_stats,
    decode_argmax,
    decode_pgm,
    discriminative_lrs,
    encode_pgm,
    ensemble_average,
    gabor,
    image_f1,
    init_model,
    load_checkpoint,
    mean_f1,
    rasterize_polygon,
    refine_mask,
    synthesize,
)

__all__ = [
    "Error",
    "Model",
    "allocate_validation",
    "clahe",
    "coco_to_masks",
    "combo_loss",
    "dataset_stats",
    "decode_argmax",
    "decode_pgm",
    "discriminative_lrs",
    "encode_pgm",
    "ensemble_average",
    "gabor",
    "image_f1",
    "init_model",
    "load_checkpoint",
    "mean_f1",
    "rasterize_polygon",
    "refine_mask",
    "synthesize",
]
