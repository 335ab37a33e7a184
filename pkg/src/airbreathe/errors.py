"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Inconsistent dimensions, shapes, or experiment settings."""


class DegenerateStatisticsError(ValueError):
    """Gradient statistics too degenerate to normalize (V(n) at the floor).

    Callers running a long simulation should catch this, transmit the round
    unnormalized (std=1, mean=0) and log the event rather than crash.
    """


class RoundSkip(Exception):
    """No device is active this round; the model update must be skipped."""
