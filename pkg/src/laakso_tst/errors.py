"""Exception types shared across the package.

Every failure mode surfaced by the public API maps onto one of these four
classes so callers (and the CLI exit-code logic) can branch without string
matching.
"""


class LaaksoTstError(Exception):
    """Base class for all package errors."""


class InputError(LaaksoTstError):
    """Caller supplied an invalid argument (bad edge id, offset out of
    range, level order violated, mismatched lift start, ...)."""


class ParseError(InputError):
    """A file or string could not be decoded into the expected structure."""


class ResourceError(LaaksoTstError):
    """A configured budget (edge count, enumeration limit, recursion depth)
    would be exceeded."""


class InternalConsistencyError(LaaksoTstError):
    """An invariant that must hold by construction was violated.

    Raised with a witness payload; if this ever fires outside a test hook it
    is a bug, not a user error.
    """

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness
