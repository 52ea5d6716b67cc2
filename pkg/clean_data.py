import logging
from typing import Optional, Sequence, Tuple

from errors import ConfigError


class CleanData:
    @staticmethod
    def clean_text(value, key: str, allow_empty: bool = False) -> str:
        if not isinstance(value, str):
            raise ConfigError(f"'{key}' must be a string, got {type(value).__name__}")
        value = value.strip()
        if not value and not allow_empty:
            raise ConfigError(f"'{key}' is empty after cleaning")
        return value


    @staticmethod
    def clean_int(value, key: str, minimum: Optional[int] = None) -> int:
        """
        Parse an integer config value.

        Args:
            value (str | int): Raw value from the config file or the CLI.
            key (str): Config key, used in the error message.
            minimum (int): Smallest accepted value, if any.

        Returns:
            int: The parsed value.
        Raises:
            ConfigError: If the value is not an integer or is below `minimum`.
        """
        logging.debug(f"CLEAN INT: {key} raw input → {value!r}")
        if isinstance(value, bool):
            raise ConfigError(f"'{key}' must be an integer, got {value!r}")
        try:
            number = int(str(value).strip())
        except ValueError:
            raise ConfigError(f"'{key}' must be an integer, got {value!r}") from None
        if minimum is not None and number < minimum:
            raise ConfigError(f"'{key}' must be >= {minimum}, got {number}")
        return number


    @staticmethod
    def clean_float(value, key: str, minimum: Optional[float] = None) -> float:
        logging.debug(f"CLEAN FLOAT: {key} raw input → {value!r}")
        try:
            number = float(str(value).strip())
        except ValueError:
            raise ConfigError(f"'{key}' must be a number, got {value!r}") from None
        if number != number or number in (float("inf"), float("-inf")):
            raise ConfigError(f"'{key}' must be finite, got {value!r}")
        if minimum is not None and number < minimum:
            raise ConfigError(f"'{key}' must be >= {minimum}, got {number}")
        return number


    @staticmethod
    def clean_int_tuple(value, key: str, minimum: Optional[int] = None, allow_empty: bool = False) -> Tuple[int, ...]:
        """Comma-separated integers, e.g. "32, 32" → (32, 32)."""
        if isinstance(value, (tuple, list)):
            parts = [str(v) for v in value]
        else:
            parts = [p for p in str(value).split(",") if p.strip()]
        if not parts and not allow_empty:
            raise ConfigError(f"'{key}' needs at least one integer")
        return tuple(CleanData.clean_int(p, key, minimum) for p in parts)


    @staticmethod
    def clean_float_pair(value, key: str) -> Tuple[float, float]:
        parts = value if isinstance(value, (tuple, list)) else str(value).split(",")
        if len(parts) != 2:
            raise ConfigError(f"'{key}' needs exactly two comma-separated numbers, got {value!r}")
        return CleanData.clean_float(parts[0], key), CleanData.clean_float(parts[1], key)


    @staticmethod
    def clean_int_groups(value, key: str) -> Optional[Tuple[Tuple[int, ...], ...]]:
        """
        Semicolon-separated groups of comma-separated integers, e.g.
        "0,1,2; 2,1,0". An empty value means no groups (None).
        """
        text = str(value).strip()
        if not text:
            return None
        return tuple(CleanData.clean_int_tuple(group, key, minimum=0) for group in text.split(";"))


    @staticmethod
    def clean_choice(value, key: str, choices: Sequence[str]) -> str:
        text = CleanData.clean_text(value, key).lower()
        if text not in choices:
            raise ConfigError(f"'{key}' must be one of {', '.join(choices)}, got '{text}'")
        return text


    @staticmethod
    def clean_path(value, key: str) -> str:
        """Paths may be left empty; otherwise surrounding whitespace and quotes are stripped."""
        text = CleanData.clean_text(value, key, allow_empty=True)
        return text.strip("'\"")
