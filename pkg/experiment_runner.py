# experiment_runner.py: seeded multi-repeat experiments, run CSVs and summary tables

from __future__ import annotations

import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from csv_manager import CsvManager
from errors import ConfigError, EmptyDataError, SchemaError
from federation_processor import METHODS, FederationProcessor, RoundConfig, evaluate_method
from log_print_manager import log_print
from metrics_log import CSV_HEADER, MetricsLog, format_float
from network_manager import ArchConfig
from partition_manager import (
    ClientDataset, TaskFamilyConfig, idx_load, label_heterogeneity, make_task_family,
    split_pers_eval, write_partition_stats,
)
from run_counter import RunCounter
from seed_manager import derive_seed


# ---------------------------
# Logging
# ---------------------------

logger = logging.getLogger(__name__)

SOURCES = ("synthetic", "idx")
STEPS_HEADER = ("steps", "client_id", "loss", "accuracy")
# std is the population standard deviation over runs
SUMMARY_HEADER = ("method", "metric", "mean", "std", "n_runs")


# ---------------------------
# Configuration
# ---------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """
    One experiment: a task family, an architecture, round settings and a method.

    task.n_clients counts training clients; n_test_clients more are generated
    from the same family and only ever personalized at test time. The master
    seed is rounds.seed.
    """
    task: TaskFamilyConfig
    arch: ArchConfig
    rounds: RoundConfig
    method: str
    n_repeats: int = 5
    n_test_clients: int = 5
    test_steps: Tuple[int, ...] = (50,)
    pers_fraction: float = 0.5
    output_dir: str = "modfed_runs"
    source: str = "synthetic"
    images_path: str = ""
    labels_path: str = ""

    def validate(self) -> "ExperimentConfig":
        self.task.validate()
        self.arch.validate()
        self.rounds.validate()
        if self.method not in METHODS:
            raise ConfigError(f"EXPERIMENT: unknown method '{self.method}', expected one of {METHODS}")
        if self.n_repeats < 1:
            raise ConfigError(f"EXPERIMENT: n_repeats must be >= 1, got {self.n_repeats}")
        if self.n_test_clients < 1:
            raise ConfigError(f"EXPERIMENT: n_test_clients must be >= 1, got {self.n_test_clients}")
        if not self.test_steps or any(k < 0 for k in self.test_steps):
            raise ConfigError(f"EXPERIMENT: test_steps must be a nonempty list of counts >= 0, got {self.test_steps}")
        if not 0.0 < self.pers_fraction < 1.0:
            raise ConfigError(f"EXPERIMENT: pers_fraction must lie in (0, 1), got {self.pers_fraction}")
        if self.rounds.clients_per_round > self.task.n_clients:
            raise ConfigError(
                f"EXPERIMENT: clients_per_round={self.rounds.clients_per_round} exceeds n_clients={self.task.n_clients}"
            )
        if self.source not in SOURCES:
            raise ConfigError(f"EXPERIMENT: source must be one of {SOURCES}, got '{self.source}'")
        if self.source == "idx" and not (self.images_path and self.labels_path):
            raise ConfigError("EXPERIMENT: source = idx needs both images_path and labels_path")
        if self.arch.n_classes != self.task.n_classes:
            raise ConfigError(
                f"EXPERIMENT: architecture has {self.arch.n_classes} classes, task has {self.task.n_classes}"
            )
        return self


@dataclass(frozen=True)
class SummaryRow:
    method: str
    metric: str
    mean: float
    std: float
    n_runs: int

    def as_row(self):
        return (self.method, self.metric, format_float(self.mean), format_float(self.std), self.n_runs)


@dataclass
class RepeatResult:
    repeat: int
    seed: int
    log: MetricsLog
    steps_rows: List[Tuple[int, int, float, float]] = field(default_factory=list)
    counter: RunCounter = field(default_factory=RunCounter)


# ---------------------------
# Statistics
# ---------------------------

def population_stats(values: Sequence[float]) -> Tuple[float, float]:
    if len(values) == 0:
        raise EmptyDataError("EXPERIMENT: no values to summarize")
    array = np.asarray(values, dtype=np.float64)
    return float(array.mean()), float(array.std(ddof=0))


def _run_metrics(header: Tuple[str, ...], rows: List[List[str]], path: str) -> Dict[str, float]:
    if header == CSV_HEADER:
        log = MetricsLog.from_csv(path)
        metrics = {}
        last_train = log.last_round("train")
        if last_train is not None:
            metrics["train_loss"] = log.mean("train", "loss", last_train)
            metrics["train_accuracy"] = log.mean("train", "accuracy", last_train)
        if log.for_phase("test"):
            metrics["test_loss"] = log.mean("test", "loss")
            metrics["test_accuracy"] = log.mean("test", "accuracy")
        return metrics

    if header == STEPS_HEADER:
        by_steps: Dict[int, List[float]] = defaultdict(list)
        for row in rows:
            by_steps[int(row[0])].append(float(row[3]))
        return {f"test_accuracy@k{k}": float(np.mean(v)) for k, v in by_steps.items()}

    raise SchemaError(f"EXPERIMENT: {path} has unexpected header {','.join(header)}")


def summarize(csv_paths: Sequence[str]) -> List[SummaryRow]:
    """
    Mean and population std of every per-run metric, grouped by method.

    The method is the name of the folder holding each CSV.
    """
    if not csv_paths:
        raise EmptyDataError("EXPERIMENT: summarize needs at least one CSV file")
    grouped: Dict[Tuple[str, str], List[float]] = defaultdict(list)
    csv_manager = CsvManager()
    for path in csv_paths:
        header, rows = csv_manager.read_rows(path)
        method = os.path.basename(os.path.dirname(os.path.abspath(path)))
        for metric, value in _run_metrics(header, rows, path).items():
            grouped[(method, metric)].append(value)

    summary = []
    for (method, metric) in sorted(grouped):
        mean, std = population_stats(grouped[(method, metric)])
        summary.append(SummaryRow(method, metric, mean, std, len(grouped[(method, metric)])))
    return summary


def write_summary(rows: Sequence[SummaryRow], path: str) -> str:
    return CsvManager().write_rows(path, SUMMARY_HEADER, (row.as_row() for row in rows))


# ---------------------------
# Running
# ---------------------------

def build_clients(cfg: ExperimentConfig, seed: int) -> Tuple[List[ClientDataset], List[ClientDataset]]:
    """Generate train + held-out clients from one family and split each into pers / eval."""
    task = replace(cfg.task, n_clients=cfg.task.n_clients + cfg.n_test_clients, seed=seed)
    base = None
    if cfg.source == "idx":
        base = idx_load(cfg.images_path, cfg.labels_path, cfg.task.n_classes)
        task = replace(task, input_dim=base.input_dim)
    clients = [
        split_pers_eval(client, cfg.pers_fraction, derive_seed(seed, "split", client.client_id))
        for client in make_task_family(task, base)
    ]
    return clients[:cfg.task.n_clients], clients[cfg.task.n_clients:]


def run_repeat(cfg: ExperimentConfig, repeat: int, progress: bool = False) -> RepeatResult:
    seed = derive_seed(cfg.rounds.seed, repeat)
    train_clients, test_clients = build_clients(cfg, seed)
    arch = replace(cfg.arch, input_dim=train_clients[0].data.input_dim)
    rounds = replace(cfg.rounds, seed=seed)

    processor = FederationProcessor({"counter": RunCounter()})
    result = processor.run(train_clients, rounds, arch, cfg.method, held_out=test_clients, progress=progress)
    outcome = RepeatResult(repeat=repeat, seed=seed, log=result.log, counter=result.counter)

    # one seed per client, so every k replays the same batch sequence
    for k in cfg.test_steps:
        for client in test_clients:
            loss, acc = evaluate_method(result.model, client, cfg.method, k, rounds,
                                        derive_seed(seed, "test", client.client_id))
            outcome.steps_rows.append((k, client.client_id, loss, acc))
            if k == cfg.test_steps[-1]:
                outcome.log.add(rounds.rounds, client.client_id, "test", loss, acc)

    method_dir = os.path.join(cfg.output_dir, cfg.method)
    write_partition_stats(train_clients + test_clients, os.path.join(method_dir, f"partition_{repeat}.csv"))
    outcome.log.to_csv(os.path.join(method_dir, f"run_{repeat}.csv"))
    CsvManager().write_rows(
        os.path.join(method_dir, f"run_{repeat}_steps.csv"),
        STEPS_HEADER,
        ((k, cid, format_float(loss), format_float(acc)) for k, cid, loss, acc in outcome.steps_rows),
    )
    log_print().repeat_finished(
        repeat, seed, outcome.log.mean("test"), label_heterogeneity(train_clients + test_clients), outcome.counter,
    )
    return outcome


def run_experiment(cfg: ExperimentConfig, progress: bool = False) -> List[SummaryRow]:
    """
    Run cfg.n_repeats seeded repeats, write run_<r>.csv / run_<r>_steps.csv
    per repeat under <output_dir>/<method>/ and a summary.csv beside them.
    """
    cfg.validate()
    printer = log_print()
    printer.experiment_started(cfg)

    counter = RunCounter()
    paths = []
    method_dir = os.path.join(cfg.output_dir, cfg.method)
    for repeat in range(1, cfg.n_repeats + 1):
        outcome = run_repeat(cfg, repeat, progress)
        counter.merge(outcome.counter)
        paths.append(os.path.join(method_dir, f"run_{repeat}.csv"))
        paths.append(os.path.join(method_dir, f"run_{repeat}_steps.csv"))

    summary = summarize(paths)
    write_summary(summary, os.path.join(method_dir, "summary.csv"))
    printer.final_summary(summary, counter)
    return summary


def summarize_directory(directory: str, output_path: Optional[str] = None) -> List[SummaryRow]:
    paths = CsvManager().compile_run_csvs(directory)
    summary = summarize(paths)
    write_summary(summary, output_path or os.path.join(directory, "summary.csv"))
    log_print().final_summary(summary)
    return summary
