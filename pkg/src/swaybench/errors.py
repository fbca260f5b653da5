"""Exception hierarchy shared by every stage of the toolkit."""

from __future__ import annotations


class SwayBenchError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(SwayBenchError, ValueError):
    """An invalid configuration value. ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DimensionError(SwayBenchError, ValueError):
    pass


class AlignmentError(SwayBenchError, ValueError):
    pass


class DegenerateExcitationError(SwayBenchError, ValueError):
    def __init__(self, band: int, message: str):
        super().__init__(f"band {band}: {message}")
        self.band = band


class StatisticsError(SwayBenchError, ValueError):
    pass


class IngestionError(SwayBenchError, ValueError):
    def __init__(self, message: str, rows: list[int] | None = None):
        super().__init__(message)
        self.rows = rows or []


class FallEvent(SwayBenchError):
    """Raised when the fall guard trips. Carries the time and the offending state."""

    def __init__(self, time: float, state, reason: str):
        super().__init__(f"fall at t={time:.3f} s: {reason}")
        self.time = time
        self.state = state
        self.reason = reason


class PipelineError(SwayBenchError):
    """Wraps a failure with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
