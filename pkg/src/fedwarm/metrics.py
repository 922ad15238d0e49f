"""Evaluation metrics and the round-log CSV interface.

The CSV schema is the contract between the simulator and downstream
tooling (comparison tables, plotting):

    round,mode,global_accuracy,avg_accuracy,mean_divergence,max_divergence,selected_clients,wallclock_ms

Floats carry six decimals, selected client ids are semicolon-joined, files
are UTF-8 with LF line endings.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, CsvSchemaError, ShapeError

CSV_HEADER = (
    "round",
    "mode",
    "global_accuracy",
    "avg_accuracy",
    "mean_divergence",
    "max_divergence",
    "selected_clients",
    "wallclock_ms",
)


def accuracy(predictions: np.ndarray, truths: np.ndarray,
             positive_label: int | None = None) -> float:
    """Fraction of correct predictions.

    With positive_label set, this is the binary (TP+TN)/(TP+TN+FP+FN) form
    with every other class folded into the negative side. Without it, plain
    multiclass accuracy. On a slice restricted to one true label the two
    coincide, which is what per-client accuracies rely on.
    """
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape or predictions.ndim != 1:
        raise ShapeError(
            f"predictions {predictions.shape} and truths {truths.shape} "
            f"must be equal-length vectors"
        )
    if predictions.size == 0:
        raise ContractError("cannot score an empty prediction vector")
    if positive_label is None:
        correct = predictions == truths
    else:
        correct = (predictions == positive_label) == (truths == positive_label)
    return float(np.mean(correct, dtype=np.float64))


def avg_accuracy(per_client: dict[int, float]) -> float:
    """Unweighted mean of per-client accuracies."""
    if not per_client:
        raise ContractError("no per-client accuracies to average")
    return float(np.mean(np.fromiter(per_client.values(), dtype=np.float64)))


def weight_divergence(client_weights, global_weights) -> float:
    """L2 distance between a client's parameters and the global ones.

    Accepts ModelWeights or raw vectors.
    """
    client_params = np.asarray(getattr(client_weights, "params", client_weights))
    global_params = np.asarray(getattr(global_weights, "params", global_weights))
    if client_params.shape != global_params.shape:
        raise ShapeError(
            f"parameter vectors differ in shape: "
            f"{client_params.shape} vs {global_params.shape}"
        )
    diff = client_params.astype(np.float64) - global_params.astype(np.float64)
    return float(np.sqrt(np.dot(diff, diff)))


@dataclass
class RoundLog:
    """Everything recorded about one round of one experiment."""

    round_index: int
    mode: str
    global_accuracy: float
    client_accuracies: dict[int, float]
    avg_accuracy: float
    divergence: dict[int, float] = field(default_factory=dict)
    selected_clients: tuple[int, ...] = ()
    wallclock_ms: int = 0

    @property
    def mean_divergence(self) -> float:
        if not self.divergence:
            return 0.0
        return float(np.mean(np.fromiter(self.divergence.values(), dtype=np.float64)))

    @property
    def max_divergence(self) -> float:
        if not self.divergence:
            return 0.0
        return float(max(self.divergence.values()))


def write_round_logs(logs: list[RoundLog], path: str) -> None:
    """Serialize logs to the CSV schema (UTF-8, LF, 6-decimal floats)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for log in logs:
            writer.writerow(
                (
                    log.round_index,
                    log.mode,
                    f"{log.global_accuracy:.6f}",
                    f"{log.avg_accuracy:.6f}",
                    f"{log.mean_divergence:.6f}",
                    f"{log.max_divergence:.6f}",
                    ";".join(str(c) for c in log.selected_clients),
                    log.wallclock_ms,
                )
            )


def read_round_logs(path: str) -> list[dict]:
    """Parse a round-log CSV back into row dicts with typed fields.

    Raises CsvSchemaError when the header does not match the schema.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise CsvSchemaError(f"{path}: empty file, expected header "
                             f"{','.join(CSV_HEADER)}") from None
    if header != CSV_HEADER:
        missing = [c for c in CSV_HEADER if c not in header]
        extra = [c for c in header if c not in CSV_HEADER]
        detail = []
        if missing:
            detail.append(f"missing columns {missing}")
        if extra:
            detail.append(f"unexpected columns {extra}")
        if not detail:
            detail.append("columns out of order")
        raise CsvSchemaError(f"{path}: {'; '.join(detail)} "
                             f"(expected header {','.join(CSV_HEADER)})")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise CsvSchemaError(f"{path}: line {lineno} has {len(row)} fields, "
                                 f"expected {len(CSV_HEADER)}")
        try:
            rows.append(
                {
                    "round": int(row[0]),
                    "mode": row[1],
                    "global_accuracy": float(row[2]),
                    "avg_accuracy": float(row[3]),
                    "mean_divergence": float(row[4]),
                    "max_divergence": float(row[5]),
                    "selected_clients": tuple(
                        int(c) for c in row[6].split(";") if c != ""
                    ),
                    "wallclock_ms": int(row[7]),
                }
            )
        except ValueError as exc:
            raise CsvSchemaError(f"{path}: line {lineno}: {exc}") from None
    return rows
