"""Error taxonomy shared across the package.

Validation-type failures (bad files, bad configs, incompatible shapes of
user-supplied data) are distinct from numeric failures (non-finite values,
nondeterministic loss evaluation) so the command line can map them to
different exit codes.
"""


class EventCapError(Exception):
    """Base class for package errors."""


class ValidationError(EventCapError):
    """Dataset or input records violate the documented schema."""


class FormatError(EventCapError):
    """A binary or delimited file does not match its declared format."""


class ConfigError(EventCapError):
    """Run configuration is malformed, incomplete, or has unknown keys."""


class GenerationError(EventCapError):
    """A synthetic-corpus request cannot be satisfied (e.g. events cannot fit)."""


class IncompatibilityError(EventCapError):
    """Checkpoint and requested run disagree (vocab size, dims, config hash)."""


class NumericError(EventCapError):
    """Non-finite value showed up where finite arithmetic was required."""


class DeterminismError(NumericError):
    """Two evaluations at identical parameters returned different values."""
