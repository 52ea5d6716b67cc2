import logging
import os
from datetime import datetime

def initialize_logging(log_dir="modfed_logs", level=logging.INFO):
    """Timestamped log file under `log_dir` plus console output."""
    os.makedirs(log_dir, exist_ok=True)
    log_file_name = f"{datetime.now().strftime('%Y-%m-%d_%H-%M-%S')}.log"
    log_file_path = os.path.join(log_dir, log_file_name)

    logging.basicConfig(
        level=level, # Levels are NOTSET , DEBUG , INFO , WARN , ERROR , CRITICAL
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file_path, encoding='utf-8'),
            logging.StreamHandler()
        ],
        force=True,
    )
    logging.debug(f"Logging initialized. Log file: {log_file_path}")
    return log_file_path


def adjust_logging_level(env):
    """
    Adjusts the logging level for a verbosity setting.

    Args:
        env (str): 'quiet', 'verbose', or anything else for the default.
    """
    if env == "quiet":
        level = logging.ERROR
    elif env == "verbose":
        level = logging.DEBUG
    else:
        level = logging.INFO
    logging.getLogger().setLevel(level)
    logging.debug(f"Adjusted logging level to {logging.getLevelName(level)} for setting: {env}")
    return level
