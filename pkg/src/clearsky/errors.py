"""Exception hierarchy shared across the package."""


class ClearskyError(Exception):
    pass


class InvalidArgumentError(ClearskyError, ValueError):
    pass


class ShapeMismatchError(InvalidArgumentError):
    pass


class DatasetError(ClearskyError):
    pass


class MissingFileError(DatasetError):
    pass


class UnpairedImageError(DatasetError):
    pass


class MalformedManifestError(DatasetError):
    pass


class EmptyBufferError(ClearskyError):
    pass


class CorruptCheckpointError(ClearskyError):
    pass


class CorruptedModelError(ClearskyError):
    pass


class NumericError(ClearskyError):
    pass
