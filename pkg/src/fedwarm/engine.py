"""Federated training: warmup bootstraps, per-client SGD, FedAvg aggregation.

One experiment is a sequence of rounds. Each round selects a client subset,
trains every selected client locally from the current global weights, and
replaces the global weights with the sample-weighted average of the client
results. Before round one, train_warmup optionally bootstraps the global
model from a small shared buffer, either from scratch or on top of features
pretrained on a disjoint label split.

All heavy work is pure functions of (seed, round, client), so rounds can
train clients on worker threads without changing any result.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .data import ClientPartition, Dataset, build_warmup_buffer, source_label_split
from .errors import (
    AggregationError,
    ConfigError,
    ContractError,
    RoundError,
)
from .metrics import RoundLog, accuracy, avg_accuracy, weight_divergence
from .nn import (
    Batch,
    Dense,
    ModelSpec,
    ModelWeights,
    backward,
    forward,
    frozen_region,
    init_weights,
    param_layers,
    predict,
    sgd_step,
    softmax_cross_entropy,
    validate_spec,
)

TRANSFER_MODES = ("none", "warmup_scratch", "warmup_pretrained")

# experiment label used in logs and CSV filenames, per transfer mode
MODE_LABEL = {
    "none": "fedavg",
    "warmup_scratch": "warmup-scratch",
    "warmup_pretrained": "warmup-pretrained",
}


@dataclass(frozen=True)
class Hyperparams:
    """Training knobs shared by federated and centralized runs.

    lr = 0 is allowed and turns every update into a no-op, which makes the
    whole run a fixed point (useful for plumbing checks).
    """

    lr: float
    batch_size: int
    local_epochs: int
    rounds: int
    participation_fraction: float
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be positive, got {self.local_epochs}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be positive, got {self.rounds}")
        if not (0 < self.participation_fraction <= 1):
            raise ConfigError(
                f"participation_fraction must be in (0, 1], got "
                f"{self.participation_fraction}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class TransferConfig:
    """How the global model is bootstrapped before round one.

    none             start from random init (plain federated averaging)
    warmup_scratch   train the random init on the shared warmup buffer
    warmup_pretrained pretrain features on pretrain_label_split, swap in a
                      fresh classifier tail, fine-tune on the warmup buffer

    freeze_layer_count parameterized layers (from the input) stay fixed for
    the rest of the experiment in every mode.
    """

    mode: str = "none"
    freeze_layer_count: int = 0
    warmup_epochs: int = 0
    pretrain_label_split: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in TRANSFER_MODES:
            raise ConfigError(
                f"transfer mode must be one of {TRANSFER_MODES}, got {self.mode!r}"
            )
        if self.freeze_layer_count < 0:
            raise ConfigError(
                f"freeze_layer_count must be non-negative, got {self.freeze_layer_count}"
            )
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be non-negative, got {self.warmup_epochs}")
        if self.mode != "none" and self.warmup_epochs < 1:
            raise ConfigError(f"mode {self.mode} needs warmup_epochs >= 1")
        if self.mode == "warmup_pretrained" and not self.pretrain_label_split:
            raise ConfigError("warmup_pretrained needs a pretrain_label_split")


@dataclass(frozen=True)
class ClientUpdate:
    """One client's locally trained weights and its sample count."""

    client_id: int
    weights: ModelWeights
    sample_count: int


def batch_slices(n: int, batch_size: int) -> list[slice]:
    """Contiguous mini-batch slices covering n rows; the tail may be short."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be positive, got {batch_size}")
    return [slice(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


def _run_epochs(spec: ModelSpec, weights: ModelWeights, inputs: np.ndarray,
                labels: np.ndarray, lr: float, batch_size: int, epochs: int,
                gen: np.random.Generator) -> ModelWeights:
    """Mini-batch SGD with a fresh shuffle per epoch. Returns new weights."""
    n = labels.shape[0]
    if n == 0 or epochs == 0 or lr == 0:
        # zero work or zero step size: training is the identity
        return weights
    for _ in range(epochs):
        perm = gen.permutation(n)
        for sl in batch_slices(n, batch_size):
            idx = perm[sl]
            batch = Batch(inputs[idx], labels[idx])
            logits, cache = forward(spec, weights, batch)
            _, grad_logits = softmax_cross_entropy(logits, batch.labels)
            grad = backward(spec, weights, cache, grad_logits)
            weights = sgd_step(weights, grad, lr)
    return weights


def _check_freeze(spec: ModelSpec, count: int) -> None:
    total = len(param_layers(spec))
    if count >= total and count > 0:
        raise ConfigError(
            f"freeze_layer_count={count} leaves nothing to train "
            f"(model has {total} parameterized layers)"
        )


def train_warmup(buffer, spec: ModelSpec, transfer: TransferConfig,
                 hp: Hyperparams, dataset: Dataset | None = None) -> ModelWeights:
    """Produce the round-zero global weights for the chosen transfer mode.

    buffer is the (inputs, labels) pair from build_warmup_buffer. The
    returned weights carry frozen_prefix = transfer.freeze_layer_count.
    """
    validate_spec(spec)
    _check_freeze(spec, transfer.freeze_layer_count)
    inputs, labels = buffer
    weights = init_weights(spec, hp.seed)

    if transfer.mode == "none":
        return replace_frozen(weights, transfer.freeze_layer_count)

    if labels.shape[0] == 0:
        raise ContractError(f"mode {transfer.mode} needs a non-empty warmup buffer")

    if transfer.mode == "warmup_scratch":
        # warmup trains every layer; freezing starts with the federated rounds
        gen = rng.stream(hp.seed, rng.WARMUP)
        weights = _run_epochs(spec, weights, inputs, labels, hp.lr,
                              hp.batch_size, transfer.warmup_epochs, gen)
        return replace_frozen(weights, transfer.freeze_layer_count)

    # warmup_pretrained
    if dataset is None:
        raise ContractError("warmup_pretrained needs the dataset for its source split")
    last_index, last_layer = param_layers(spec)[-1]
    if not isinstance(last_layer, Dense):
        raise ConfigError("warmup_pretrained needs a dense classifier tail to replace")
    src_inputs, src_labels, n_src = source_label_split(dataset, transfer.pretrain_label_split)
    src_layers = list(spec.layers)
    src_layers[last_index] = Dense(last_layer.in_dim, n_src)
    src_spec = ModelSpec(tuple(src_layers), spec.input_shape, n_src)
    src_weights = init_weights(src_spec, hp.seed)
    gen = rng.stream(hp.seed, rng.PRETRAIN)
    src_weights = _run_epochs(src_spec, src_weights, src_inputs, src_labels,
                              hp.lr, hp.batch_size, transfer.warmup_epochs, gen)
    # carry over every feature layer; the task-side tail keeps its fresh init
    tail_offset = weights.layer_offsets[-1]
    weights.params[:tail_offset] = src_weights.params[:tail_offset]
    weights = replace_frozen(weights, transfer.freeze_layer_count)
    gen = rng.stream(hp.seed, rng.WARMUP)
    return _run_epochs(spec, weights, inputs, labels, hp.lr,
                       hp.batch_size, transfer.warmup_epochs, gen)


def replace_frozen(weights: ModelWeights, frozen_prefix: int) -> ModelWeights:
    return ModelWeights(weights.params, weights.layer_offsets, frozen_prefix)


def select_participants(num_clients: int, fraction: float, round_index: int,
                        seed: int) -> tuple[int, ...]:
    """Sorted client ids for one round: max(1, round(fraction * num_clients)).

    Draws depend only on (seed, round_index), never on previous rounds.
    """
    if num_clients < 1:
        raise ConfigError(f"num_clients must be positive, got {num_clients}")
    if not (0 < fraction <= 1):
        raise ConfigError(f"participation fraction must be in (0, 1], got {fraction}")
    if round_index < 1:
        raise ConfigError(f"round_index must be >= 1, got {round_index}")
    count = min(num_clients, max(1, int(num_clients * fraction + 0.5)))
    gen = rng.stream(seed, rng.SELECT, round_index)
    picked = gen.choice(num_clients, size=count, replace=False)
    return tuple(sorted(int(c) for c in picked))


def train_user(client: ClientPartition, global_weights: ModelWeights,
               dataset: Dataset, spec: ModelSpec, hp: Hyperparams,
               round_index: int) -> ClientUpdate:
    """Local SGD from the global weights on one client's train rows.

    The shuffle stream is keyed by (seed, round, client id), so the result
    is independent of scheduling and of every other client.
    """
    idx = client.train_indices
    if idx.shape[0] == 0:
        raise ContractError(f"client {client.client_id} has no train samples")
    weights = global_weights.copy()
    gen = rng.stream(hp.seed, rng.TRAIN_USER, round_index, client.client_id)
    weights = _run_epochs(spec, weights, dataset.train_inputs[idx],
                          dataset.train_labels[idx], hp.lr, hp.batch_size,
                          hp.local_epochs, gen)
    return ClientUpdate(client.client_id, weights, int(idx.shape[0]))


def aggregate_fedavg(updates: list[ClientUpdate]) -> ModelWeights:
    """Sample-weighted average of client parameter vectors.

    Accumulates in float64, emits float32. The frozen prefix is copied
    verbatim from the first update after checking that every update agrees
    on it bitwise, so frozen layers survive aggregation untouched.
    """
    if not updates:
        raise ContractError("nothing to aggregate")
    first = updates[0].weights
    for u in updates[1:]:
        if u.weights.params.shape != first.params.shape:
            raise AggregationError(
                f"clients {updates[0].client_id} and {u.client_id} have "
                f"different parameter counts: {first.params.shape[0]} vs "
                f"{u.weights.params.shape[0]}"
            )
        if u.weights.layer_offsets != first.layer_offsets:
            raise AggregationError(
                f"clients {updates[0].client_id} and {u.client_id} have "
                f"different layer layouts"
            )
        if u.weights.frozen_prefix != first.frozen_prefix:
            raise AggregationError(
                f"clients {updates[0].client_id} and {u.client_id} disagree "
                f"on frozen_prefix: {first.frozen_prefix} vs {u.weights.frozen_prefix}"
            )
    total = sum(u.sample_count for u in updates)
    if total <= 0:
        raise AggregationError(
            f"no samples across clients {[u.client_id for u in updates]}"
        )
    acc = np.zeros(first.params.shape[0], dtype=np.float64)
    for u in updates:
        acc += (u.sample_count / total) * u.weights.params.astype(np.float64)
    params = acc.astype(np.float32)
    frozen = frozen_region(first)
    if frozen.stop > 0:
        for u in updates[1:]:
            if not np.array_equal(u.weights.params[frozen], first.params[frozen]):
                raise AggregationError(
                    f"client {u.client_id} modified frozen layers "
                    f"(differs from client {updates[0].client_id})"
                )
        params[frozen] = first.params[frozen]
    return ModelWeights(params, first.layer_offsets, first.frozen_prefix)


def _evaluate(spec: ModelSpec, weights: ModelWeights, dataset: Dataset,
              partitions: list[ClientPartition]):
    """Global test accuracy plus per-client accuracy on each client's label slice."""
    preds = predict(spec, weights, dataset.test_inputs)
    global_acc = accuracy(preds, dataset.test_labels)
    per_client = {}
    for p in partitions:
        mask = dataset.test_labels == p.label
        per_client[p.client_id] = accuracy(preds[mask], dataset.test_labels[mask])
    return global_acc, per_client


def run_federated(dataset: Dataset, partitions: list[ClientPartition],
                  spec: ModelSpec, transfer: TransferConfig, hp: Hyperparams,
                  workers: int = 1, round_hook=None) -> list[RoundLog]:
    """Full federated experiment. Returns one RoundLog per round.

    workers > 1 trains the round's clients on a thread pool; results are
    identical to the sequential schedule because client training is pure
    and updates are aggregated in selection order. round_hook, if given,
    is called with (round_index, updates, aggregated_weights) after each
    round, mainly so tests can observe intermediate state.
    """
    if not partitions:
        raise ContractError("no client partitions")
    if workers < 1:
        raise ConfigError(f"workers must be positive, got {workers}")
    buffer = build_warmup_buffer(dataset, partitions)
    weights = train_warmup(buffer, spec, transfer, hp, dataset=dataset)
    mode = MODE_LABEL[transfer.mode]
    by_id = {p.client_id: p for p in partitions}
    if len(by_id) != len(partitions):
        raise ContractError("duplicate client ids in partitions")
    logs: list[RoundLog] = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for round_index in range(1, hp.rounds + 1):
            t0 = time.perf_counter()
            try:
                selected = select_participants(
                    len(partitions), hp.participation_fraction, round_index, hp.seed
                )
                run_one = lambda cid: train_user(  # noqa: E731
                    by_id[cid], weights, dataset, spec, hp, round_index
                )
                if pool is not None:
                    updates = list(pool.map(run_one, selected))
                else:
                    updates = [run_one(pos) for pos in selected]
                weights = aggregate_fedavg(updates)
                divergence = {
                    u.client_id: weight_divergence(u.weights, weights)
                    for u in updates
                }
                global_acc, per_client = _evaluate(spec, weights, dataset, partitions)
            except Exception as exc:
                raise RoundError(round_index, exc) from exc
            logs.append(
                RoundLog(
                    round_index=round_index,
                    mode=mode,
                    global_accuracy=global_acc,
                    client_accuracies=per_client,
                    avg_accuracy=avg_accuracy(per_client),
                    divergence=divergence,
                    selected_clients=selected,
                    wallclock_ms=int((time.perf_counter() - t0) * 1000),
                )
            )
            if round_hook is not None:
                round_hook(round_index, updates, weights)
    finally:
        if pool is not None:
            pool.shutdown()
    return logs


def run_centralized(dataset: Dataset, partitions: list[ClientPartition],
                    spec: ModelSpec, hp: Hyperparams) -> list[RoundLog]:
    """Baseline: pool every client's rows (train + warmup) and train centrally.

    One round equals local_epochs epochs over the pooled data, so round
    counts line up with the federated runs. Divergence is logged as zero
    (there is only one model) and selected_clients lists everyone.
    """
    if not partitions:
        raise ContractError("no client partitions")
    validate_spec(spec)
    ordered = sorted(partitions, key=lambda p: p.client_id)
    idx = np.concatenate(
        [np.concatenate([p.warmup_indices, p.train_indices]) for p in ordered]
    )
    inputs = dataset.train_inputs[idx]
    labels = dataset.train_labels[idx]
    weights = init_weights(spec, hp.seed)
    gen = rng.stream(hp.seed, rng.CENTRALIZED)
    all_ids = tuple(p.client_id for p in ordered)
    logs: list[RoundLog] = []
    for round_index in range(1, hp.rounds + 1):
        t0 = time.perf_counter()
        try:
            weights = _run_epochs(spec, weights, inputs, labels, hp.lr,
                                  hp.batch_size, hp.local_epochs, gen)
            global_acc, per_client = _evaluate(spec, weights, dataset, partitions)
        except Exception as exc:
            raise RoundError(round_index, exc) from exc
        logs.append(
            RoundLog(
                round_index=round_index,
                mode="centralized",
                global_accuracy=global_acc,
                client_accuracies=per_client,
                avg_accuracy=avg_accuracy(per_client),
                divergence={},
                selected_clients=all_ids,
                wallclock_ms=int((time.perf_counter() - t0) * 1000),
            )
        )
    return logs
