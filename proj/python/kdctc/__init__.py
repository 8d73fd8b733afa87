"""Texture-distillation image classification toolkit.

Thin Python facade over the C++ core: dataset manifests, the dual-branch
shared-weight trainer, its losses, and the experiment pipeline.
"""

from ._core import (  # noqa: F401
    DatasetIndex,
    KdctcError,
    LossConfig,
    Model,
    SplitManifest,
    build_model,
    cross_entropy,
    distillation_loss,
    evaluate,
    focal_loss,
    generate_synthetic_texture_dataset,
    load_checkpoint,
    low_data_count,
    read_manifest,
    run_experiment,
    sample_low_data,
    save_checkpoint,
    scan_dataset,
    stratified_split,
    subsample_balanced,
    teacher_hard_label,
    total_loss,
    train,
    write_manifest,
    write_report,
    __version__,
)

__all__ = [
    "DatasetIndex",
    "KdctcError",
    "LossConfig",
    "Model",
    "SplitManifest",
    "build_model",
    "cross_entropy",
    "distillation_loss",
    "evaluate",
    "focal_loss",
    "generate_synthetic_texture_dataset",
    "load_checkpoint",
    "low_data_count",
    "read_manifest",
    "run_experiment",
    "sample_low_data",
    "save_checkpoint",
    "scan_dataset",
    "stratified_split",
    "subsample_balanced",
    "teacher_hard_label",
    "total_loss",
    "train",
    "write_manifest",
    "write_report",
]
