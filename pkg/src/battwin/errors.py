"""Exception hierarchy shared across the toolkit."""


class BattwinError(Exception):
    """Base class for all toolkit errors.

    The CLI maps subclasses to single-line machine-parsable error codes
    (the class name) with exit status 1.
    """


class SocOutOfRange(BattwinError):
    """State of charge outside [0, 1] under the strict construction policy."""


class UnsegmentableTrace(BattwinError):
    """No current edge found; the trace cannot be split into pulse/rest segments."""


class ZeroCurrent(BattwinError):
    """An operation that divides by pulse current received zero current."""


class FitDiverged(BattwinError):
    """Nonlinear least-squares iteration exhausted without meeting tolerances."""


class RankDeficient(BattwinError):
    """Too few distinct abscissae to determine the polynomial coefficients."""


class DegenerateInnovationVariance(BattwinError):
    """Innovation variance was non-positive; indicates a broken covariance."""


class NonuniformSampling(BattwinError):
    """Sample timestamps deviate from the configured uniform interval."""


class DutyOutOfRange(BattwinError):
    """Converter duty cycle outside the configured clamp band."""


class SocExhausted(BattwinError):
    """A discharge phase drained the plant to SoC = 0 and the run is configured to halt."""


class SchemaMismatch(BattwinError):
    """A CSV file does not match the expected column schema."""


class NonMonotoneTime(BattwinError):
    """Trace timestamps are not non-decreasing."""


class ScenarioError(BattwinError):
    """A scenario description is inconsistent or unachievable."""
