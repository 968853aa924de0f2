"""Exception types raised by the retrieval pipeline."""


class PhaseRingsError(Exception):
    """Base class for all package errors."""


class DegenerateOperator(PhaseRingsError):
    """Radiation operator has no usable singular values."""


class IndexMismatch(PhaseRingsError):
    """Coefficient layout does not match the modal basis."""


class SigmaUnderflow(PhaseRingsError):
    """A retained singular value is too small for stable inversion."""


class UndersampledRing(PhaseRingsError):
    """Azimuthal sampling below the Nyquist rate of a ring."""


class UndersampledSource(PhaseRingsError):
    """Requested cut cannot be built from the stored samples."""


class IllConditioned(PhaseRingsError):
    """Least-squares fit of cut coefficients is rank deficient."""


class OrderCollapse(PhaseRingsError):
    """Power coefficients carry no usable polynomial content."""


class PairingFailure(PhaseRingsError):
    """Roots cannot be grouped into conjugate-reciprocal pairs."""


class EmptyCandidateSet(PhaseRingsError):
    """No candidate field survives the requested enumeration mode."""


class TrackLost(PhaseRingsError):
    """Zero trajectories between neighbouring rings cannot be matched."""


class NearZeroAnchor(PhaseRingsError):
    """Anchor point falls where the field is too small to normalize."""


class AllEliminated(PhaseRingsError):
    """Congruence checks discarded every candidate on a cut."""


class Unsolvable(PhaseRingsError):
    """The crossword search exhausted its escalation options."""


class NonFinite(PhaseRingsError):
    """Cost or gradient evaluation produced a non-finite value."""


class RankDeficient(PhaseRingsError):
    """Initialization system leaves some modes unconstrained."""

    def __init__(self, message, unconstrained=None):
        super().__init__(message)
        self.unconstrained = tuple(unconstrained or ())


class SpectrumNotNegligibleAtEdge(PhaseRingsError):
    """Spectrum energy at the visible-space border is too large."""


class PhaseWrapAmbiguity(PhaseRingsError):
    """Recovered phase offset exceeds the unambiguous half-cycle."""


class GridMismatch(PhaseRingsError):
    """Two gridded quantities do not share the same sampling."""


class ConfigError(PhaseRingsError):
    """Run configuration is malformed or contains unknown keys."""
