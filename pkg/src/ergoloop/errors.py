"""Exception types shared across the package.

Every failure mode that a caller is expected to branch on gets its own
class; message text stays short and names the violated hypothesis.
"""


class ErgoloopError(Exception):
    """Base class for all package-specific failures."""


class InvalidFieldError(ErgoloopError):
    """Raised for fields that violate a declared precondition (mean, shape)."""


class OrbitCapError(ErgoloopError):
    """Orbit or iteration request exceeds the configured hard cap."""


class ShorteningSearchError(ErgoloopError):
    """Conjugator search exhausted its budget without a strict improvement."""


class UnderdeterminedSequenceError(ErgoloopError):
    """Sequential system lacks the conjugator-chain decomposition."""


class FlattenBudgetError(ErgoloopError):
    """Averaging recursion hit max_iter before reaching its target.

    Carries the partial trace so callers can inspect progress.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class CoveringBoundError(ErgoloopError):
    """A covering family fails the counting inequality it claims."""


class TransportHypothesisError(ErgoloopError):
    """Measure hypothesis mu(A) > 2*C*mu(B) fails for a transport request."""


class CorridorBlockedError(ErgoloopError):
    """No lattice corridor exists between a source and target cube."""


class FamilyTooLargeError(ErgoloopError):
    """Requested explicit enumeration exceeds the enumeration cap."""


class GridTooCoarseError(ErgoloopError):
    """Sampling resolution cannot certify the requested tolerance."""


class SweepError(ErgoloopError):
    """A sweeping loop cannot cover the fiber within its slot budget."""


class ConfigError(ErgoloopError):
    """Malformed configuration file or command-line value."""
