"""StructNet-CE: channel layer, interference fold and shared bit classifier."""

from .model import (
    ClassifierShape,
    DegenerateWeightsError,
    StructNetParams,
    TrainConfig,
    TrainingFailed,
    TrainingSample,
    TrainingSet,
    UnsupportedMode,
    build_training_set,
    channel_shift,
    features,
    forward,
    interference_fold,
    load_params,
    new_params,
    save_params,
)
from .training import (
    TrainStats,
    classifier_bits,
    detect_data,
    extract_channel,
    gradient_fault,
    loss_and_gradients,
    loss_value,
    train_subframe,
)

__all__ = [
    "ClassifierShape", "DegenerateWeightsError", "StructNetParams", "TrainConfig", "TrainingFailed",
    "TrainingSample", "TrainingSet", "UnsupportedMode", "build_training_set", "channel_shift",
    "features", "forward", "interference_fold", "load_params", "new_params", "save_params",
    "TrainStats", "classifier_bits", "detect_data", "extract_channel", "gradient_fault",
    "loss_and_gradients", "loss_value", "train_subframe",
]
