"""Exception hierarchy shared by the wignerfrag modules."""


class WignerFragError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(WignerFragError, ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class CoincidentPoints(WignerFragError, ValueError):
    pass


class NotConverged(WignerFragError, RuntimeError):
    """An iterative solver hit its iteration cap.

    ``best`` carries the last (or best) state so the caller can inspect or
    restart from it; ``stage`` is set by multi-stage drivers.
    """

    def __init__(self, message, best=None, stage=None):
        super().__init__(message)
        self.best = best
        self.stage = stage


class LinearDependenceCollapse(WignerFragError, RuntimeError):
    pass


class GridTooCoarse(WignerFragError, RuntimeError):
    pass


class AnalysisError(WignerFragError, RuntimeError):
    """Base for failures of the density/lattice analysis."""


class NormalizationDrift(AnalysisError):
    pass


class PeakCountMismatch(AnalysisError):
    def __init__(self, found, expected):
        super().__init__(f"found {found} peaks, expected {expected}")
        self.found = found
        self.expected = expected


class CountMismatch(AnalysisError):
    pass


class TooFewPeaks(AnalysisError):
    pass
