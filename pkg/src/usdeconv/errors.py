"""Exception taxonomy shared by the toolkit.

Argument/contract violations raise the builtin ``ValueError``. The classes
below exist so callers (and the CLI exit-code mapping) can distinguish bad
*data* from *numerical* breakdowns.
"""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, frames, configs)."""


class InvalidStateError(RuntimeError):
    """An operation was invoked with required intermediate state missing."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (singular system, non-finite update)."""


class DegenerateChannelError(NumericalError):
    """A per-channel estimate is unusable (e.g. all-zero synthesized data)."""
