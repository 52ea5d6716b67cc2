import math
import os

import pytest

from csv_manager import CsvManager
from errors import ConfigError, EmptyDataError, SchemaError
from experiment_runner import (
    ExperimentConfig, build_clients, population_stats, run_experiment, summarize, summarize_directory,
)
from federation_processor import RoundConfig
from main import main
from metrics_log import MetricsLog
from network_manager import ArchConfig
from partition_manager import TaskFamilyConfig


def small_config(output_dir, method="cafeme", rounds=2, n_repeats=2, **kwargs):
    task = TaskFamilyConfig(n_clients=4, n_classes=3, samples_per_client=20, input_dim=4,
                            shift="concept", n_groups=2, permutation_style="cyclic")
    arch = ArchConfig(input_dim=4, hidden_widths=(6,), n_classes=3,
                      modulator_feature_dims=(4,), modulator_head_dims=(4,))
    return ExperimentConfig(
        task=task, arch=arch, rounds=RoundConfig(rounds=rounds, clients_per_round=2, seed=5),
        method=method, n_repeats=n_repeats, n_test_clients=2, test_steps=(0, 3),
        output_dir=str(output_dir), **kwargs,
    )


def test_population_stats():
    mean, std = population_stats([0.90, 0.92, 0.94])
    assert mean == pytest.approx(0.92, abs=1e-12)
    assert std == pytest.approx(0.016329931618554516, abs=1e-12)
    assert population_stats([0.7]) == (0.7, 0.0)


def test_population_stats_match_one_pass_formula():
    values = [0.31, 0.77, 0.52, 0.64, 0.18, 0.99]
    n = len(values)
    total = sum(values)
    squares = sum(v * v for v in values)
    mean, std = population_stats(values)
    assert abs(mean - total / n) < 1e-12
    assert abs(std - math.sqrt(squares / n - (total / n) ** 2)) < 1e-12


def write_test_run(folder, name, loss):
    log = MetricsLog()
    log.add(0, 0, "train", loss, 0.5)
    log.add(1, 9, "test", loss, 0.25)
    return log.to_csv(os.path.join(str(folder), name))


def test_summarize_groups_by_method_and_metric(tmp_path):
    paths = [write_test_run(tmp_path / "cafeme", f"run_{i}.csv", loss) for i, loss in enumerate((1.0, 2.0, 3.0), 1)]
    rows = {(r.method, r.metric): r for r in summarize(paths)}
    loss = rows[("cafeme", "test_loss")]
    assert loss.mean == pytest.approx(2.0) and loss.std == pytest.approx(math.sqrt(2.0 / 3.0))
    assert loss.n_runs == 3
    assert rows[("cafeme", "train_accuracy")].std == 0.0


def test_summarize_single_run_has_zero_std(tmp_path):
    (row, *_) = summarize([write_test_run(tmp_path / "fedavg", "run_1.csv", 0.4)])
    assert row.std == 0.0 and row.n_runs == 1


def test_summarize_errors(tmp_path):
    with pytest.raises(EmptyDataError):
        summarize([])
    bad = CsvManager().write_rows(str(tmp_path / "x" / "run_1.csv"), ("epoch", "score"), [(1, 0.5)])
    with pytest.raises(SchemaError, match="epoch,score"):
        summarize([bad])


def test_build_clients_splits_train_and_test(tmp_path):
    cfg = small_config(tmp_path)
    train, test = build_clients(cfg, seed=1)
    assert [c.client_id for c in train] == [0, 1, 2, 3]
    assert [c.client_id for c in test] == [4, 5]
    assert all(len(c.pers_idx) == 10 and len(c.eval_idx) == 10 for c in train + test)


def test_run_experiment_writes_files(tmp_path):
    cfg = small_config(tmp_path / "out")
    summary = run_experiment(cfg)
    folder = tmp_path / "out" / "cafeme"
    for name in ("run_1.csv", "run_2.csv", "run_1_steps.csv", "run_2_steps.csv", "summary.csv", "partition_1.csv"):
        assert (folder / name).exists()

    metrics = {r.metric for r in summary}
    assert {"train_loss", "train_accuracy", "test_loss", "test_accuracy",
            "test_accuracy@k0", "test_accuracy@k3"} <= metrics
    assert all(r.n_runs == 2 and r.std >= 0.0 for r in summary)

    header, rows = CsvManager().read_rows(str(folder / "summary.csv"))
    assert header == ("method", "metric", "mean", "std", "n_runs")
    assert len(rows) == len(summary)


def test_untrained_single_repeat(tmp_path):
    cfg = small_config(tmp_path, method="fedavg", rounds=0, n_repeats=1)
    rows = {r.metric: r for r in run_experiment(cfg)}
    assert 0.0 <= rows["test_accuracy"].mean <= 1.0
    assert rows["test_accuracy"].std == 0.0
    assert "train_loss" not in rows


def test_identical_configs_give_identical_bytes(tmp_path):
    for name in ("a", "b"):
        run_experiment(small_config(tmp_path / name, rounds=3))
    for name in ("run_1.csv", "run_2.csv", "run_1_steps.csv", "summary.csv", "partition_2.csv"):
        first = (tmp_path / "a" / "cafeme" / name).read_bytes()
        second = (tmp_path / "b" / "cafeme" / name).read_bytes()
        assert first == second


def test_summarize_directory_skips_non_run_files(tmp_path):
    run_experiment(small_config(tmp_path, method="perfedavg", n_repeats=1))
    run_experiment(small_config(tmp_path, method="fedavg", n_repeats=1))
    rows = summarize_directory(str(tmp_path))
    assert {r.method for r in rows} == {"perfedavg", "fedavg"}
    assert (tmp_path / "summary.csv").exists()


def test_experiment_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        small_config(tmp_path, n_repeats=0).validate()
    with pytest.raises(ConfigError):
        small_config(tmp_path, source="idx").validate()
    with pytest.raises(ConfigError):
        small_config(tmp_path, method="ifca").validate()


def test_cli_run_and_summarize(tmp_path, monkeypatch):
    monkeypatch.delenv("MODFED_OUTPUT_DIR", raising=False)
    config = tmp_path / "exp.ini"
    config.write_text(
        "[experiment]\nmethod = cafeme\nn_repeats = 1\nn_test_clients = 2\ntest_steps = 0, 2\n"
        "[task]\nn_clients = 4\nn_classes = 3\nsamples_per_client = 20\ninput_dim = 4\nn_groups = 2\n"
        "[architecture]\nhidden_widths = 6\nmodulator_feature_dims = 4\nmodulator_head_dims = 4\n"
        "[rounds]\nrounds = 2\nclients_per_round = 2\n",
        encoding="utf-8",
    )
    out = tmp_path / "runs"
    logs = str(tmp_path / "logs")
    assert main(["--log-dir", logs, "run", "--config", str(config), "--out", str(out), "--no-progress"]) == 0
    assert (out / "cafeme" / "run_1.csv").exists()
    assert (out / "cafeme" / "config.ini").exists()
    assert main(["--log-dir", logs, "summarize", "--in", str(out)]) == 0
    assert (out / "summary.csv").exists()


def test_cli_reports_config_errors(tmp_path):
    config = tmp_path / "bad.ini"
    config.write_text("[rounds]\nrounds = 2\n", encoding="utf-8")
    assert main(["--log-dir", str(tmp_path / "logs"), "run", "--config", str(config)]) == 1
    assert main(["--log-dir", str(tmp_path / "logs"), "summarize", "--in", str(tmp_path / "missing")]) == 1
