"""Exception types shared across the package."""


class FairtabError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(FairtabError):
    """A table, file, or model does not conform to the declared schema."""


class ParseError(FairtabError):
    """A delimited input file could not be parsed."""


class DecodeError(FairtabError):
    """An encoded matrix could not be mapped back to table rows."""


class DegenerateGroupError(FairtabError):
    """A protected/label cell needed by a computation is empty or invalid."""


class TrainingError(FairtabError):
    """Model training failed (bad inputs, divergence, non-finite loss)."""


class ModelFormatError(FairtabError):
    """A serialized model file is corrupt or has an unsupported version."""
