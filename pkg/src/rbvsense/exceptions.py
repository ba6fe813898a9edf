"""Exception hierarchy shared by every rbvsense module."""


class RbvError(Exception):
    """Base class for all errors raised by rbvsense."""


class SchemaError(RbvError, ValueError):
    """Header or feature names do not match the expected schema."""

    def __init__(self, message, missing=(), unknown=()):
        super().__init__(message)
        self.missing = tuple(missing)
        self.unknown = tuple(unknown)


class IngestionError(RbvError, ValueError):
    """A dataset could not be built from its source."""


class CsvParseError(IngestionError):
    """A cell could not be parsed. ``row`` is 1-based and counts the header."""

    def __init__(self, message, row, column):
        super().__init__(f"{message} (row {row}, column {column!r})")
        self.row = row
        self.column = column


class ArityError(RbvError, ValueError):
    """Input length does not match what a model or scaler expects."""

    def __init__(self, expected, got, what="input"):
        super().__init__(f"{what}: expected {expected} values, got {got}")
        self.expected = expected
        self.got = got


class ModelFormatError(RbvError, ValueError):
    """A model file is malformed. ``line`` is 1-based."""

    def __init__(self, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class ModelVersionError(ModelFormatError):
    """A model file carries a known family magic with an unsupported version."""


class QuantizationOverflowError(RbvError, OverflowError):
    """A scaled coefficient does not fit the signed 16-bit storage slot."""

    def __init__(self, tensor, index, value):
        super().__init__(
            f"{tensor}{list(index)} = {value} does not fit int16 [-32768, 32767]"
        )
        self.tensor = tensor
        self.index = tuple(index)
        self.value = value
