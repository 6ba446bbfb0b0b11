"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: usage/config problems exit 1,
data problems exit 2, backend failures exit 3.
"""

from __future__ import annotations


class ThemecoderError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(ThemecoderError):
    """Bad configuration or usage: unknown template version, missing
    credential env var, contradictory flags."""

    exit_code = 1


class DataError(ThemecoderError):
    """Malformed or inconsistent input data: corpus records, codebook files,
    gold labels, id mismatches, impossible sample sizes."""

    exit_code = 2


class BackendError(ThemecoderError):
    """A completion backend failed after transport retries were exhausted,
    or a replay script has no entry for a request."""

    exit_code = 3
