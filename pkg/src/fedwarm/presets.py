"""Built-in model architectures and experiment configurations.

The experiment presets pin the reference settings for the bundled studies
(MNIST federated lr=0.1 / centralized lr=0.001, B=10, E=1, C=0.2; the hard
synthetic presets at lr=0.01). The concrete layer stacks are this package's
own small choices; nothing here is a benchmark-mandated architecture.
"""

from __future__ import annotations

import math
import os

from .errors import ConfigError
from .nn import Conv2d, Dense, Flatten, ModelSpec, Relu

MNIST_DIR_ENV = "FEDWARM_MNIST_DIR"


def _flat_dim(input_shape: tuple[int, ...]) -> int:
    return int(math.prod(input_shape))


def _spatial(input_shape: tuple[int, ...], name: str) -> tuple[int, int, int]:
    if len(input_shape) != 3:
        raise ConfigError(
            f"model preset {name!r} needs an image-shaped input (h, w, c), "
            f"got {input_shape}"
        )
    return input_shape


def _mlp(input_shape, num_classes):
    f = _flat_dim(input_shape)
    layers = (Dense(f, 64), Relu(), Dense(64, num_classes))
    return ModelSpec(layers, (f,), num_classes)


def _mlp_small(input_shape, num_classes):
    f = _flat_dim(input_shape)
    layers = (Dense(f, 32), Relu(), Dense(32, num_classes))
    return ModelSpec(layers, (f,), num_classes)


def _conv_small(input_shape, num_classes):
    h, w, c = _spatial(input_shape, "conv-small")
    tail_in = 8 * (h - 2) * (w - 2)
    layers = (Conv2d(c, 8, 3), Relu(), Flatten(), Dense(tail_in, num_classes))
    return ModelSpec(layers, (h, w, c), num_classes)


def _conv_deep(input_shape, num_classes):
    h, w, c = _spatial(input_shape, "conv-deep")
    tail_in = 16 * (h - 4) * (w - 4)
    layers = (
        Conv2d(c, 8, 3),
        Relu(),
        Conv2d(8, 16, 3),
        Relu(),
        Flatten(),
        Dense(tail_in, 64),
        Relu(),
        Dense(64, num_classes),
    )
    return ModelSpec(layers, (h, w, c), num_classes)


def _conv_stride(input_shape, num_classes):
    # Stride-2 convs halve the map twice, standing in for pooling; the small
    # activation maps keep training stable at aggressive learning rates.
    h, w, c = _spatial(input_shape, "conv-stride")
    h1, w1 = (h - 3) // 2 + 1, (w - 3) // 2 + 1
    h2, w2 = (h1 - 3) // 2 + 1, (w1 - 3) // 2 + 1
    tail_in = 16 * h2 * w2
    layers = (
        Conv2d(c, 8, 3, stride=2),
        Relu(),
        Conv2d(8, 16, 3, stride=2),
        Relu(),
        Flatten(),
        Dense(tail_in, num_classes),
    )
    return ModelSpec(layers, (h, w, c), num_classes)


MODEL_PRESETS = {
    "mlp": _mlp,
    "mlp-small": _mlp_small,
    "conv-small": _conv_small,
    "conv-deep": _conv_deep,
    "conv-stride": _conv_stride,
}


def build_model_preset(name: str, input_shape: tuple[int, ...],
                       num_classes: int) -> ModelSpec:
    if name not in MODEL_PRESETS:
        raise ConfigError(
            f"unknown model preset {name!r}, choose from {sorted(MODEL_PRESETS)}"
        )
    return MODEL_PRESETS[name](tuple(input_shape), num_classes)


# gradient-check harness shapes per model preset: input shape, classes, rows.
# conv-deep uses 2 rows because its dense head dominates the runtime.
GRADCHECK_SETUPS = {
    "mlp": ((784,), 10, 4),
    "mlp-small": ((64,), 10, 4),
    "conv-small": ((12, 12, 1), 10, 4),
    "conv-deep": ((12, 12, 1), 10, 2),
    "conv-stride": ((11, 11, 1), 10, 4),
}


def mnist_dir() -> str:
    return os.environ.get(MNIST_DIR_ENV, os.path.join("data", "mnist"))


def _mnist_dataset() -> dict[str, str]:
    d = mnist_dir()
    return {
        "type": "idx",
        "train_images": os.path.join(d, "train-images-idx3-ubyte.gz"),
        "train_labels": os.path.join(d, "train-labels-idx1-ubyte.gz"),
        "test_images": os.path.join(d, "t10k-images-idx3-ubyte.gz"),
        "test_labels": os.path.join(d, "t10k-labels-idx1-ubyte.gz"),
        "num_classes": "10",
    }


def _mnist_common(mode: str, warmup_fraction: str) -> dict[str, dict[str, str]]:
    return {
        "experiment": {
            "mode": mode,
            "seed": "42",
            "workers": "1",
            "output_dir": os.path.join("runs", f"mnist-{mode}"),
        },
        "dataset": _mnist_dataset(),
        "partition": {
            "num_clients": "10",
            "min_samples": "800",
            "max_samples": "1000",
            "warmup_fraction": warmup_fraction,
        },
        "model": {"preset": "conv-stride"},
        "hyperparams": {
            "lr": "0.1",
            "batch_size": "10",
            "local_epochs": "1",
            "rounds": "200",
            "participation_fraction": "0.2",
        },
    }


def _hard_dataset(num_classes: str) -> dict[str, str]:
    return {
        "type": "synthetic",
        "num_classes": num_classes,
        "samples_per_class": "200",
        "feature_shape": "12x12x1",
        "class_separation": "1.0",
    }


def _hard_common(name: str, mode: str, num_classes: str) -> dict[str, dict[str, str]]:
    return {
        "experiment": {
            "mode": mode,
            "seed": "11",
            "workers": "1",
            "output_dir": os.path.join("runs", name),
        },
        "dataset": _hard_dataset(num_classes),
        "partition": {
            "num_clients": "20",
            "min_samples": "120",
            "max_samples": "160",
            "warmup_fraction": "0.05",
        },
        "model": {"preset": "conv-deep"},
        "hyperparams": {
            "lr": "0.01",
            "batch_size": "10",
            "local_epochs": "1",
            "rounds": "10",
            "participation_fraction": "1.0",
        },
    }


def experiment_presets() -> dict[str, dict[str, dict[str, str]]]:
    """Raw (string-valued) config skeletons, rebuilt per call so the data
    directory override is honored."""
    mnist_fedavg = _mnist_common("fedavg", "0.0")

    mnist_centralized = _mnist_common("centralized", "0.0")
    mnist_centralized["hyperparams"]["lr"] = "0.001"

    mnist_warmup = _mnist_common("warmup-scratch", "0.05")
    mnist_warmup["experiment"]["output_dir"] = os.path.join("runs", "mnist-warmup")
    mnist_warmup["transfer"] = {"freeze_layer_count": "0", "warmup_epochs": "5"}

    smoke = {
        "experiment": {
            "mode": "fedavg",
            "seed": "7",
            "workers": "1",
            "output_dir": os.path.join("runs", "synthetic-smoke"),
        },
        "dataset": {
            "type": "synthetic",
            "num_classes": "4",
            "samples_per_class": "50",
            "feature_shape": "16",
            "class_separation": "3.0",
        },
        "partition": {
            "num_clients": "4",
            "min_samples": "20",
            "max_samples": "40",
            "warmup_fraction": "0.0",
        },
        "model": {"preset": "mlp-small"},
        "hyperparams": {
            "lr": "0.1",
            "batch_size": "10",
            "local_epochs": "1",
            "rounds": "5",
            "participation_fraction": "1.0",
        },
    }

    hard_fedavg = _hard_common("synthetic-hard-fedavg", "fedavg", "20")

    hard_warmup = _hard_common("synthetic-hard-warmup", "warmup-scratch", "20")
    hard_warmup["transfer"] = {"freeze_layer_count": "0", "warmup_epochs": "50"}

    transfer_scratch = _hard_common("synthetic-transfer-scratch", "warmup-scratch", "40")
    transfer_scratch["transfer"] = {"freeze_layer_count": "0", "warmup_epochs": "20"}

    transfer_pretrained = _hard_common(
        "synthetic-transfer-pretrained", "warmup-pretrained", "40"
    )
    transfer_pretrained["transfer"] = {
        "freeze_layer_count": "2",
        "warmup_epochs": "10",
        "pretrain_labels": "20-39",
    }

    return {
        "mnist-fedavg": mnist_fedavg,
        "mnist-centralized": mnist_centralized,
        "mnist-warmup": mnist_warmup,
        "synthetic-smoke": smoke,
        "synthetic-hard-fedavg": hard_fedavg,
        "synthetic-hard-warmup": hard_warmup,
        "synthetic-transfer-scratch": transfer_scratch,
        "synthetic-transfer-pretrained": transfer_pretrained,
    }
