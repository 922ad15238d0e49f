"""Deterministic federated-learning simulator with unique-label clients,
warmup data sharing, and frozen-layer transfer bootstraps."""

from .data import (
    ClientPartition,
    Dataset,
    PartitionSpec,
    build_warmup_buffer,
    generate_synthetic,
    load_idx,
    load_idx_dataset,
    partition_unique_label,
)
from .engine import (
    ClientUpdate,
    Hyperparams,
    TransferConfig,
    aggregate_fedavg,
    run_centralized,
    run_federated,
    select_participants,
    train_user,
    train_warmup,
)
from .metrics import (
    RoundLog,
    accuracy,
    avg_accuracy,
    read_round_logs,
    weight_divergence,
    write_round_logs,
)
from .nn import (
    Batch,
    Conv2d,
    Dense,
    Flatten,
    ModelSpec,
    ModelWeights,
    Relu,
    backward,
    forward,
    gradient_check,
    init_weights,
    predict,
    sgd_step,
    softmax_cross_entropy,
)

__version__ = "0.1.0"
