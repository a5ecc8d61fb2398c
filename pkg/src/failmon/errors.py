"""Exception hierarchy shared by every failmon module."""


class FailmonError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(FailmonError):
    """A binary artifact (.ftens/.fmem/.fcal or stream record) is malformed."""


class ValidationError(FailmonError):
    """Inputs violate a documented contract (dims, finiteness, label sets)."""


class InsufficientData(FailmonError):
    """Too few episodes/frames to perform the requested operation."""


class ParameterError(FailmonError):
    """A configuration value is outside its legal range."""


class UndefinedMetric(FailmonError):
    """A metric has no defined value for this input (e.g. single-class AUROC)."""
