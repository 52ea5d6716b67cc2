import csv
import logging
import os
import re
from typing import Iterable, List, Sequence, Tuple

from errors import SchemaError

RUN_FILE_PATTERN = r"run_\d+(_steps)?\.csv"


class CsvManager:
    def compile_run_csvs(self, base_directory, pattern=RUN_FILE_PATTERN):
        """
        Walk a results folder and collect every run CSV, sorted by path.

        Args:
            base_directory (str): Folder written by `run` (one sub-folder per method).
            pattern (str): Regex a file name must fully match to count as a run file.

        Returns:
            list: Paths of the run CSVs.
        """
        if not os.path.isdir(base_directory):
            raise FileNotFoundError(f"CSV MANAGER: results folder not found: {base_directory}")

        matcher = re.compile(pattern)
        csv_paths = []
        for root, _, files in os.walk(base_directory):
            for file in files:
                if matcher.fullmatch(file):
                    csv_paths.append(os.path.join(root, file))

        csv_paths.sort()
        logging.info(f"CSV MANAGER: found {len(csv_paths)} run files under {base_directory}")
        return csv_paths

    def write_rows(self, path: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
        folder = os.path.dirname(path)
        try:
            if folder:
                os.makedirs(folder, exist_ok=True)
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(rows)
        except OSError as e:
            logging.error(f"CSV MANAGER: failed writing {path}: {e}")
            raise OSError(f"CSV MANAGER: failed writing {path}: {e}") from e
        logging.debug(f"CSV MANAGER: wrote {path}")
        return path

    def read_rows(self, path: str) -> Tuple[Tuple[str, ...], List[List[str]]]:
        try:
            with open(path, "r", newline="", encoding="utf-8") as f:
                reader = csv.reader(f)
                header = next(reader, None)
                rows = [row for row in reader if row]
        except OSError as e:
            logging.error(f"CSV MANAGER: failed reading {path}: {e}")
            raise OSError(f"CSV MANAGER: failed reading {path}: {e}") from e
        if header is None:
            raise SchemaError(f"CSV MANAGER: {path} is empty (no header)")
        return tuple(header), rows
