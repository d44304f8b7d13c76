"""Dataset distillation robustness benchmark.

Distill a dataset into a few synthetic images per class, train classifiers on
the result, and measure how they hold up under L-inf attacks.
"""

from ._core import (
    ArgumentError,
    Dataset,
    DatasetSplit,
    Distilled,
    FormatError,
    IoError,
    Model,
    TrainingError,
    __version__,
    clean_accuracy,
    distill,
    drop_rate,
    load_builtin,
    load_model,
    make_blobs,
    read_distilled,
    registered_loaders,
    robust_accuracy,
    run_cli,
    save_model,
    train,
    write_distilled,
)

__all__ = [
    "ArgumentError",
    "Dataset",
    "DatasetSplit",
    "Distilled",
    "FormatError",
    "IoError",
    "Model",
    "TrainingError",
    "__version__",
    "clean_accuracy",
    "distill",
    "drop_rate",
    "load_builtin",
    "load_model",
    "make_blobs",
    "read_distilled",
    "registered_loaders",
    "robust_accuracy",
    "run_cli",
    "save_model",
    "train",
    "write_distilled",
]
