"""Exception hierarchy shared across the package.

The three leaf classes map onto the CLI exit codes: usage errors (bad
arguments, dimension mismatches, invalid hyper-parameters), data errors
(unparseable or unsupported input files), and numerical fit failures.
"""


class OpenEvtError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class UsageError(OpenEvtError):
    """Caller violated a precondition (bad argument, dimension mismatch)."""

    exit_code = 2


class DataError(OpenEvtError):
    """Input data is malformed or unsupported for the requested method."""

    exit_code = 3


class FitError(OpenEvtError):
    """A numerical fit failed (degenerate sample, non-convergence).

    ``diagnostics`` carries solver state useful for debugging: sample
    size, iteration count, last parameter value and similar.
    """

    exit_code = 4

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
