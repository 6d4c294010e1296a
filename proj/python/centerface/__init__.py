"""Center-heatmap face and masked-face detector with a small autodiff trainer."""

from ._core import (
    BBox,
    GridConfig,
    SceneSpec,
    Sample,
    Detection,
    DecodeConfig,
    ModelConfig,
    TrainConfig,
    Model,
    corner_radius,
    gaussian_sigma,
    generate_scene,
    generate_dataset,
    encode_targets,
    decode,
    iou,
    evaluate,
    gradient_suite,
    train,
    load_model,
)

__all__ = [
    "BBox",
    "GridConfig",
    "SceneSpec",
    "Sample",
    "Detection",
    "DecodeConfig",
    "ModelConfig",
    "TrainConfig",
    "Model",
    "corner_radius",
    "gaussian_sigma",
    "generate_scene",
    "generate_dataset",
    "encode_targets",
    "decode",
    "iou",
    "evaluate",
    "gradient_suite",
    "train",
    "load_model",
]
