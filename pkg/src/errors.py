"""Exception hierarchy shared by the protocol modules.

Library code raises these; the CLI and the HTTP entrypoint catch ``GistError``
and turn it into an exit code or an error response.
"""


class GistError(Exception):
    """Base class for every error raised by the simulator."""


class SetupError(GistError):
    """Group parameter generation or validation failed."""


class ArgumentError(GistError, ValueError):
    """An argument is outside the domain an operation accepts."""


class RangeError(GistError, ValueError):
    """A signed value does not fit the plaintext space Z_q unambiguously."""


class ValidationError(GistError, ValueError):
    """A profile value lies outside its attribute domain."""

    def __init__(self, message, attribute=None):
        super().__init__(message)
        self.attribute = attribute


class ProtocolError(GistError):
    """Contributions or rounds violate the protocol structure."""


class DecodeError(GistError):
    """No exponent in the search window maps to the given element."""

    def __init__(self, message, attribute=None, window=None):
        super().__init__(message)
        self.attribute = attribute
        self.window = window


class DegenerateModelError(GistError):
    """A Gaussian model puts no representable mass on its support."""


class DivergenceError(GistError):
    """KL divergence is infinite for the given pair of distributions."""


class IngestionError(GistError):
    """No usable profile rows were found."""


class FormatError(GistError):
    """An input file does not have the expected structure."""


class StageError(GistError):
    """Wraps a failure inside one protocol stage, keeping its label."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
