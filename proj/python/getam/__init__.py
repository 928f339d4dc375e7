"""GETAM attribution maps, label completion and training on a small ViT."""

from ._core import (
    ModelConfig,
    Sample,
    TrainConfig,
    ValidationError,
    VisionTransformer,
    aggregate,
    attribute,
    classification_accuracy,
    complete_labels,
    generate_dataset,
    getam_block,
    gradcheck,
    l_seg,
    miou,
    pseudo_label_miou,
    read_dataset,
    run_cli,
    run_training,
    write_dataset,
)

__all__ = [name for name in dir() if not name.startswith("_")]
