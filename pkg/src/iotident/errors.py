"""Exception and warning types shared across the toolkit."""


class IotIdentError(Exception):
    """Base class for all toolkit errors."""


class MalformedFileError(IotIdentError):
    """Capture file has a bad magic number or a truncated global header."""


class OutOfRangeError(IotIdentError):
    """A port number outside [0, 65535] was passed to the port classifier."""


class CatalogueError(IotIdentError):
    """A feature catalogue definition is invalid."""


class SchemaMismatchError(IotIdentError):
    """A dataset file's header row disagrees with the active catalogue."""


class LengthMismatchError(IotIdentError):
    """Aligned sequences (labels, MACs, predictions) differ in length."""


class CatalogueMismatchError(IotIdentError):
    """A feature vector does not match the catalogue a model was trained on."""


class VersionMismatchError(IotIdentError):
    """A persisted model was built against a different catalogue version."""


class CorruptModelError(IotIdentError):
    """A model file cannot be parsed back into a decision tree."""


class InsufficientFilesError(IotIdentError):
    """Not enough capture files to build a train/test split."""


class EmptySearchSpaceError(IotIdentError):
    """The hyperparameter search space contains no configurations."""


class DegenerateDataError(IotIdentError):
    """An operation requiring at least two classes received fewer."""


class EmptyResultError(IotIdentError):
    """A filter removed every feature."""


class AliasMapError(IotIdentError):
    """A label alias map is malformed (for example, it contains chains)."""


class LabelMapError(IotIdentError):
    """A MAC-to-label map file is malformed."""


class TruncatedRecordWarning(UserWarning):
    """A capture record claimed more bytes than remained in the file."""


class SingleClassWarning(UserWarning):
    """Training data contained a single class; the tree is one leaf."""


class SingleFileDeviceWarning(UserWarning):
    """A device contributed one capture file; it was assigned to train."""
