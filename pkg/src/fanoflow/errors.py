"""Exception hierarchy shared across the package."""


class FanoflowError(Exception):
    """Base class for all package-specific failures."""


class ConfigurationError(FanoflowError):
    """Bad user input: unknown preset, unknown key, out-of-range value."""


class DomainError(FanoflowError):
    """Mathematically invalid argument (nonpositive weight, asymmetric form, ...)."""


class DegenerateMetricError(FanoflowError):
    """Potential lost strict convexity at some grid node."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class NormalizationError(FanoflowError):
    """The volume pairing fixing an additive constant is degenerate."""


class NumericError(FanoflowError):
    """NaN/Inf propagation or a failed scalar solve."""


class OracleInconclusiveError(FanoflowError):
    """The Legendre-dual cross check could not be evaluated (not a disagreement)."""


class BlowupSuspectedError(FanoflowError):
    """Time step underflow; carries the curvature peak for the rescaler."""

    def __init__(self, message, t=None, peak_node=None, peak_value=None):
        super().__init__(message)
        self.t = t
        self.peak_node = peak_node
        self.peak_value = peak_value
