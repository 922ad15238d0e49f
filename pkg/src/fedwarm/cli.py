"""Command-line entry point: run experiments, compare logs, check gradients.

    fedwarm run <config-file-or-preset> [--seed N] [--workers N] [--output-dir D]
    fedwarm compare <csv> [<csv> ...]
    fedwarm gradcheck <model-preset> [--seed N]

Exit codes: 0 success, 1 user error (bad config, missing file, bad CSV),
2 internal error (a round failed, a numeric contract broke).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time

import numpy as np

from . import rng
from .config import (
    ExperimentConfig,
    config_from_preset,
    format_config,
    parse_config,
    with_overrides,
)
from .data import Dataset, generate_synthetic, load_idx_dataset, partition_unique_label
from .engine import run_centralized, run_federated
from .errors import (
    AggregationError,
    ConfigError,
    ContractError,
    CsvSchemaError,
    DataError,
    IdxConsistencyError,
    IdxFormatError,
    PartitionError,
    RoundError,
    ShapeError,
    SimulatorError,
)
from .metrics import RoundLog, read_round_logs, write_round_logs
from .nn import Batch, ModelSpec, gradient_check, init_weights, validate_spec
from .presets import GRADCHECK_SETUPS, build_model_preset, experiment_presets

GRADCHECK_THRESHOLD = 1e-4

_USER_ERRORS = (
    ConfigError, ShapeError, DataError, PartitionError,
    IdxFormatError, IdxConsistencyError, CsvSchemaError, OSError,
)
_INTERNAL_ERRORS = (RoundError, ContractError, AggregationError)


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.dataset
    if d.kind == "idx":
        return load_idx_dataset(
            d.train_images, d.train_labels, d.test_images, d.test_labels,
            num_classes=d.num_classes,
        )
    return generate_synthetic(
        d.num_classes, d.samples_per_class, d.feature_shape,
        d.class_separation, cfg.seed,
    )


def resolve_model(cfg: ExperimentConfig, dataset: Dataset) -> ModelSpec:
    if cfg.model.preset is not None:
        spec = build_model_preset(
            cfg.model.preset, dataset.feature_shape, dataset.num_classes
        )
    else:
        input_shape = cfg.model.input_shape or dataset.feature_shape
        spec = ModelSpec(cfg.model.layers, tuple(input_shape), dataset.num_classes)
    validate_spec(spec)
    need = int(math.prod(spec.input_shape))
    have = int(math.prod(dataset.feature_shape))
    if need != have:
        raise ConfigError(
            f"model wants {need} features per row but the dataset provides {have}"
        )
    return spec


def run_experiment(cfg: ExperimentConfig):
    """Execute one experiment; returns (logs, csv_path). Writes provenance,
    the round-log CSV, and summary.txt under cfg.output_dir."""
    t0 = time.perf_counter()
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "config.resolved"), "w",
              encoding="utf-8", newline="\n") as fh:
        fh.write(format_config(cfg))
    dataset = build_dataset(cfg)
    partitions = partition_unique_label(dataset, cfg.partition)
    spec = resolve_model(cfg, dataset)
    if cfg.mode == "centralized":
        logs = run_centralized(dataset, partitions, spec, cfg.hyperparams)
    else:
        logs = run_federated(
            dataset, partitions, spec, cfg.transfer, cfg.hyperparams,
            workers=cfg.workers,
        )
    csv_path = os.path.join(cfg.output_dir, f"{cfg.mode}.csv")
    write_round_logs(logs, csv_path)
    runtime = time.perf_counter() - t0
    final = logs[-1]
    with open(os.path.join(cfg.output_dir, "summary.txt"), "w",
              encoding="utf-8", newline="\n") as fh:
        fh.write(
            f"mode: {cfg.mode}\n"
            f"rounds: {len(logs)}\n"
            f"final_global_accuracy: {final.global_accuracy:.6f}\n"
            f"final_avg_accuracy: {final.avg_accuracy:.6f}\n"
            f"total_runtime_s: {runtime:.3f}\n"
        )
    return logs, csv_path


def load_config(source: str) -> ExperimentConfig:
    if os.path.isfile(source):
        return parse_config(source)
    if source in experiment_presets():
        return config_from_preset(source)
    raise ConfigError(
        f"{source!r} is neither a config file nor a preset; "
        f"presets: {sorted(experiment_presets())}"
    )


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg = with_overrides(cfg, seed=args.seed, workers=args.workers,
                         output_dir=args.output_dir)
    logs, csv_path = run_experiment(cfg)
    final = logs[-1]
    print(
        f"mode={cfg.mode} rounds={len(logs)} "
        f"final_global_accuracy={final.global_accuracy:.6f} "
        f"final_avg_accuracy={final.avg_accuracy:.6f}"
    )
    print(f"wrote {csv_path}")
    return 0


def compare_table(paths: list[str]) -> str:
    """Aligned per-round global-accuracy table plus final-round deltas."""
    if not paths:
        raise ConfigError("nothing to compare")
    series = []
    seen: dict[str, int] = {}
    lengths = []
    for path in paths:
        rows = read_round_logs(path)
        label = rows[0]["mode"] if rows else os.path.splitext(os.path.basename(path))[0]
        seen[label] = seen.get(label, 0) + 1
        if seen[label] > 1:
            label = f"{label}#{seen[label]}"
        series.append((label, [(r["round"], r["global_accuracy"]) for r in rows]))
        lengths.append(len(rows))
    depth = min(lengths)
    labels = [label for label, _ in series]
    widths = [max(len(label), 8) for label in labels]
    lines = ["  ".join(["round"] + [l.rjust(w) for l, w in zip(labels, widths)])]
    for i in range(depth):
        cells = [str(series[0][1][i][0]).rjust(5)]
        for (label, points), w in zip(series, widths):
            cells.append(f"{points[i][1]:.6f}".rjust(w))
        lines.append("  ".join(cells))
    if depth > 0:
        base_label, base_points = series[0]
        last_round = base_points[depth - 1][0]
        deltas = [
            f"{label} {points[depth - 1][1] - base_points[depth - 1][1]:+.6f}"
            for label, points in series[1:]
        ]
        if deltas:
            lines.append(
                f"deltas at round {last_round} vs {base_label}: " + ", ".join(deltas)
            )
    if len(set(lengths)) > 1:
        lines.append(
            f"note: aligned on the common prefix of {depth} rounds "
            f"(file lengths: {', '.join(str(n) for n in lengths)})"
        )
    return "\n".join(lines)


def _cmd_compare(args) -> int:
    print(compare_table(args.csvs))
    return 0


def _cmd_gradcheck(args) -> int:
    name = args.model_preset
    if name not in GRADCHECK_SETUPS:
        raise ConfigError(
            f"unknown model preset {name!r}, choose from {sorted(GRADCHECK_SETUPS)}"
        )
    input_shape, num_classes, batch_rows = GRADCHECK_SETUPS[name]
    seed = args.seed if args.seed is not None else 42
    spec = build_model_preset(name, input_shape, num_classes)
    weights = init_weights(spec, seed)
    gen = rng.stream(seed, rng.GRADCHECK)
    features = int(math.prod(input_shape))
    inputs = gen.random((batch_rows, features)).astype(np.float32)
    labels = gen.integers(0, num_classes, size=batch_rows)
    # jitter so biases are nonzero: a generic point checks more than the init
    weights.params[:] += gen.uniform(
        -0.05, 0.05, size=weights.params.shape[0]
    ).astype(np.float32)
    batch = Batch(inputs, labels)
    error = gradient_check(spec, weights, batch, epsilon=1e-4)
    ok = error < GRADCHECK_THRESHOLD
    print(
        f"gradcheck {name}: max relative error {error:.3e} "
        f"(threshold {GRADCHECK_THRESHOLD:.0e}) -> {'PASS' if ok else 'FAIL'}"
    )
    return 0 if ok else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedwarm",
        description="Deterministic federated-learning simulator with "
                    "unique-label clients and warmup bootstraps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file or preset")
    p_run.add_argument("config", help="config path or preset name")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--output-dir", default=None)
    p_run.set_defaults(fn=_cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate global accuracy across runs")
    p_cmp.add_argument("csvs", nargs="+", help="round-log CSV files")
    p_cmp.set_defaults(fn=_cmd_compare)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p_gc.add_argument("model_preset", help=f"one of {sorted(GRADCHECK_SETUPS)}")
    p_gc.add_argument("--seed", type=int, default=None)
    p_gc.set_defaults(fn=_cmd_gradcheck)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except _INTERNAL_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SimulatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
