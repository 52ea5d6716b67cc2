# Standard Library Modules
import argparse
import logging
import os
import sys

# These are modules made for this program specifically.
from errors import ModfedError
from experiment_runner import run_experiment, summarize_directory
from logging_manager import adjust_logging_level, initialize_logging
from settings_manager import load_experiment_config, write_config


def build_parser():
    parser = argparse.ArgumentParser(prog="modfed", description="Personalized federated learning experiments.")
    parser.add_argument("--log-dir", default="modfed_logs", help="Folder for timestamped log files.")
    parser.add_argument("--verbosity", choices=("quiet", "normal", "verbose"), default="normal")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run a seeded multi-repeat experiment.")
    run.add_argument("--config", required=True, help="INI experiment file.")
    run.add_argument("--seed", type=int, default=None, help="Override the master seed.")
    run.add_argument("--method", default=None, help="cafeme, fedavg, fedavg_ft or perfedavg.")
    run.add_argument("--out", default=None, help="Output folder (beats MODFED_OUTPUT_DIR and the config).")
    run.add_argument("--no-progress", action="store_true", help="Hide the round progress bar.")

    summarize = commands.add_parser("summarize", help="Summarize the run CSVs under a folder.")
    summarize.add_argument("--in", dest="input_dir", required=True, help="Folder written by `run`.")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)

    # Initialize logging
    initialize_logging(args.log_dir)
    adjust_logging_level(args.verbosity)

    try:
        if args.command == "run":
            cfg = load_experiment_config(args.config, seed=args.seed, method=args.method, output_dir=args.out)
            write_config(cfg, os.path.join(cfg.output_dir, cfg.method, "config.ini"))
            run_experiment(cfg, progress=not args.no_progress)
        else:
            summarize_directory(args.input_dir)
    except (ModfedError, OSError) as e:
        logging.error(f"modfed {args.command} failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
