class ModfedError(Exception):
    """Base class for every error raised by the lab."""


class ShapeError(ModfedError, ValueError):
    pass


class TargetIndexError(ModfedError, IndexError):
    pass


class ArchitectureError(ModfedError, ValueError):
    pass


class PartitionError(ModfedError, ValueError):
    pass


class IdxFormatError(ModfedError, ValueError):
    pass


class EmptyDataError(ModfedError, ValueError):
    pass


class ConfigError(ModfedError, ValueError):
    pass


class SchemaError(ModfedError, ValueError):
    pass
