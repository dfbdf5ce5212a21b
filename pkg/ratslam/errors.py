from __future__ import annotations


class RatSlamError(Exception):
    """Base class for every error the pipeline reports to the user."""

    exit_code: int = 1


class ConfigError(RatSlamError, ValueError):
    """Malformed config text or a violated parameter invariant."""

    exit_code = 2


class DatasetError(RatSlamError, ValueError):
    """Missing manifest, bad CSV, non-monotonic timestamps, unreadable image."""

    exit_code = 2


class MissingDataError(RatSlamError):
    """Required data is absent, e.g. evaluation without ground truth."""

    exit_code = 3


class NetworkCollapseError(RatSlamError, ArithmeticError):
    """All pose-cell activity was clipped away."""

    exit_code = 1


class EvaluationError(RatSlamError, ValueError):
    """Empty point sets or a degenerate alignment problem."""

    exit_code = 1
