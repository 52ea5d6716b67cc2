import os
import logging
import configparser
from dataclasses import replace
from typing import Optional

from clean_data import CleanData
from errors import ConfigError
from experiment_runner import SOURCES, ExperimentConfig
from federation_processor import METHODS, RoundConfig
from network_manager import MODULATION_MODES, ArchConfig
from partition_manager import LABEL_SKEWS, PERMUTATION_STYLES, SHIFT_KINDS, TaskFamilyConfig

OUTPUT_DIR_ENV = "MODFED_OUTPUT_DIR"
REQUIRED_KEYS = {"experiment": ("method",)}

# Default Settings (desk scale: 20 train + 5 test clients, T=200, M=5, S=5, B=30, k=50, 5 repeats)
DEFAULT_EXPERIMENT_SETTINGS = {
    "method"            : None,
    "seed"              : "0",
    "n_repeats"         : "5",
    "n_test_clients"    : "5",
    "test_steps"        : "50",
    "pers_fraction"     : "0.5",
    "output_dir"        : "modfed_runs",

    # Data source
    "source"            : "synthetic",
    "images_path"       : "",
    "labels_path"       : "",
}

DEFAULT_TASK_SETTINGS = {
    "n_clients"         : "20",
    "n_classes"         : "5",
    "samples_per_client": "120",
    "input_dim"         : "8",

    # Shift
    "shift"             : "concept",
    "rotation_range"    : "0, 200",
    "n_groups"          : "4",
    "permutation_style" : "seeded",
    "label_permutations": "",

    # Label skew
    "label_skew"        : "none",
    "shards_per_client" : "2",
    "concentration"     : "0.3",

    # Clusters
    "cluster_radius"    : "3.0",
    "noise"             : "0.5",
    "class_decay"       : "1.0",
}

DEFAULT_ARCHITECTURE_SETTINGS = {
    "hidden_widths"          : "32, 32",
    "modulator_feature_dims" : "32",
    "modulator_head_dims"    : "32",
    "modulation_mode"        : "gating",
}

DEFAULT_ROUNDS_SETTINGS = {
    "rounds"            : "200",
    "clients_per_round" : "5",
    "pers_steps"        : "5",
    "alpha"             : "0.05",
    "beta"              : "0.05",
    "batch_size"        : "30",
    "local_steps"       : "5",
    "eval_every"        : "0",
}

DEFAULT_SETTINGS = {
    "experiment"  : DEFAULT_EXPERIMENT_SETTINGS,
    "task"        : DEFAULT_TASK_SETTINGS,
    "architecture": DEFAULT_ARCHITECTURE_SETTINGS,
    "rounds"      : DEFAULT_ROUNDS_SETTINGS,
}


def _new_parser():
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case sensitive
    return parser


def _merged_sections(parser, path):
    """Defaults overlaid with the file's values; rejects unknown sections and keys."""
    sections = {}
    for section in parser.sections():
        if section not in DEFAULT_SETTINGS:
            raise ConfigError(f"SETTINGS MANAGER: unknown section [{section}] in {path}")
        for key in parser[section]:
            if key not in DEFAULT_SETTINGS[section]:
                raise ConfigError(f"SETTINGS MANAGER: unknown key '{key}' in section [{section}] of {path}")

    for section, defaults in DEFAULT_SETTINGS.items():
        values = dict(defaults)
        if parser.has_section(section):
            values.update(parser[section])
        for key in REQUIRED_KEYS.get(section, ()):
            if values.get(key) is None or not str(values[key]).strip():
                raise ConfigError(f"SETTINGS MANAGER: missing required key '{key}' in section [{section}] of {path}")
        sections[section] = values
    return sections


def build_experiment_config(sections) -> ExperimentConfig:
    clean = CleanData
    exp, task, arch, rounds = (sections[s] for s in ("experiment", "task", "architecture", "rounds"))

    task_cfg = TaskFamilyConfig(
        n_clients=clean.clean_int(task["n_clients"], "n_clients", 1),
        n_classes=clean.clean_int(task["n_classes"], "n_classes", 2),
        samples_per_client=clean.clean_int(task["samples_per_client"], "samples_per_client", 2),
        input_dim=clean.clean_int(task["input_dim"], "input_dim", 1),
        shift=clean.clean_choice(task["shift"], "shift", SHIFT_KINDS),
        rotation_range=clean.clean_float_pair(task["rotation_range"], "rotation_range"),
        n_groups=clean.clean_int(task["n_groups"], "n_groups", 1),
        permutation_style=clean.clean_choice(task["permutation_style"], "permutation_style", PERMUTATION_STYLES),
        label_permutations=clean.clean_int_groups(task["label_permutations"], "label_permutations"),
        label_skew=clean.clean_choice(task["label_skew"], "label_skew", LABEL_SKEWS),
        shards_per_client=clean.clean_int(task["shards_per_client"], "shards_per_client", 1),
        concentration=clean.clean_float(task["concentration"], "concentration"),
        cluster_radius=clean.clean_float(task["cluster_radius"], "cluster_radius"),
        noise=clean.clean_float(task["noise"], "noise", 0.0),
        class_decay=clean.clean_float(task["class_decay"], "class_decay"),
    )
    arch_cfg = ArchConfig(
        input_dim=task_cfg.input_dim,
        hidden_widths=clean.clean_int_tuple(arch["hidden_widths"], "hidden_widths", 1),
        n_classes=task_cfg.n_classes,
        modulator_feature_dims=clean.clean_int_tuple(arch["modulator_feature_dims"], "modulator_feature_dims", 1),
        modulator_head_dims=clean.clean_int_tuple(
            arch["modulator_head_dims"], "modulator_head_dims", 1, allow_empty=True),
        modulation_mode=clean.clean_choice(arch["modulation_mode"], "modulation_mode", MODULATION_MODES),
    )
    round_cfg = RoundConfig(
        rounds=clean.clean_int(rounds["rounds"], "rounds", 0),
        clients_per_round=clean.clean_int(rounds["clients_per_round"], "clients_per_round", 1),
        pers_steps=clean.clean_int(rounds["pers_steps"], "pers_steps", 0),
        alpha=clean.clean_float(rounds["alpha"], "alpha", 0.0),
        beta=clean.clean_float(rounds["beta"], "beta", 0.0),
        batch_size=clean.clean_int(rounds["batch_size"], "batch_size", 1),
        seed=clean.clean_int(exp["seed"], "seed", 0),
        local_steps=clean.clean_int(rounds["local_steps"], "local_steps", 0),
        eval_every=clean.clean_int(rounds["eval_every"], "eval_every", 0),
    )
    return ExperimentConfig(
        task=task_cfg,
        arch=arch_cfg,
        rounds=round_cfg,
        method=clean.clean_choice(exp["method"], "method", METHODS),
        n_repeats=clean.clean_int(exp["n_repeats"], "n_repeats", 1),
        n_test_clients=clean.clean_int(exp["n_test_clients"], "n_test_clients", 1),
        test_steps=clean.clean_int_tuple(exp["test_steps"], "test_steps", 0),
        pers_fraction=clean.clean_float(exp["pers_fraction"], "pers_fraction"),
        output_dir=clean.clean_path(exp["output_dir"], "output_dir") or "modfed_runs",
        source=clean.clean_choice(exp["source"], "source", SOURCES),
        images_path=clean.clean_path(exp["images_path"], "images_path"),
        labels_path=clean.clean_path(exp["labels_path"], "labels_path"),
    ).validate()


def parse_config(path) -> ExperimentConfig:
    """
    Read an INI experiment file with sections [experiment], [task],
    [architecture] and [rounds]. Only `method` is required.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"SETTINGS MANAGER: config file not found: {path}")
    parser = _new_parser()
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as e:
        raise ConfigError(f"SETTINGS MANAGER: cannot parse {path}: {e}") from e

    cfg = build_experiment_config(_merged_sections(parser, path))
    logging.info(f"SETTINGS MANAGER: loaded {path} (method={cfg.method}, seed={cfg.rounds.seed})")
    return cfg


def _join(values):
    return ", ".join(str(v) for v in values)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text; parse_config(serialize_config(cfg)) gives back cfg."""
    task, arch, rounds = cfg.task, cfg.arch, cfg.rounds
    sections = {
        "experiment": {
            "method": cfg.method,
            "seed": rounds.seed,
            "n_repeats": cfg.n_repeats,
            "n_test_clients": cfg.n_test_clients,
            "test_steps": _join(cfg.test_steps),
            "pers_fraction": repr(float(cfg.pers_fraction)),
            "output_dir": cfg.output_dir,
            "source": cfg.source,
            "images_path": cfg.images_path,
            "labels_path": cfg.labels_path,
        },
        "task": {
            "n_clients": task.n_clients,
            "n_classes": task.n_classes,
            "samples_per_client": task.samples_per_client,
            "input_dim": task.input_dim,
            "shift": task.shift,
            "rotation_range": _join(repr(float(v)) for v in task.rotation_range),
            "n_groups": task.n_groups,
            "permutation_style": task.permutation_style,
            "label_permutations": "; ".join(_join(p) for p in task.label_permutations or ()),
            "label_skew": task.label_skew,
            "shards_per_client": task.shards_per_client,
            "concentration": repr(float(task.concentration)),
            "cluster_radius": repr(float(task.cluster_radius)),
            "noise": repr(float(task.noise)),
            "class_decay": repr(float(task.class_decay)),
        },
        "architecture": {
            "hidden_widths": _join(arch.hidden_widths),
            "modulator_feature_dims": _join(arch.modulator_feature_dims),
            "modulator_head_dims": _join(arch.modulator_head_dims),
            "modulation_mode": arch.modulation_mode,
        },
        "rounds": {
            "rounds": rounds.rounds,
            "clients_per_round": rounds.clients_per_round,
            "pers_steps": rounds.pers_steps,
            "alpha": repr(float(rounds.alpha)),
            "beta": repr(float(rounds.beta)),
            "batch_size": rounds.batch_size,
            "local_steps": rounds.local_steps,
            "eval_every": rounds.eval_every,
        },
    }
    lines = []
    for section, values in sections.items():
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {value}".rstrip() for key, value in values.items())
        lines.append("")
    return "\n".join(lines)


def write_config(cfg: ExperimentConfig, path: str) -> str:
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(serialize_config(cfg))
    return path


def resolve_output_dir(cli_value: Optional[str], file_value: str) -> str:
    """CLI --out beats the environment, which beats the config file."""
    if cli_value:
        return cli_value
    env_value = os.environ.get(OUTPUT_DIR_ENV, "").strip()
    if env_value:
        logging.info(f"SETTINGS MANAGER: output dir overridden by {OUTPUT_DIR_ENV}={env_value}")
        return env_value
    return file_value


def load_experiment_config(path, seed: Optional[int] = None, method: Optional[str] = None,
                           output_dir: Optional[str] = None) -> ExperimentConfig:
    cfg = parse_config(path)
    if seed is not None:
        cfg = replace(cfg, rounds=replace(cfg.rounds, seed=CleanData.clean_int(seed, "seed", 0)))
    if method is not None:
        cfg = replace(cfg, method=CleanData.clean_choice(method, "method", METHODS))
    cfg = replace(cfg, output_dir=resolve_output_dir(output_dir, cfg.output_dir))
    return cfg.validate()
