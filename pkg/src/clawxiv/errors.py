"""Exception hierarchy with stable CLI exit codes.

Exit codes are a function of failure category only:
0 success, 1 internal error, 2 validation/gate failure, 3 safety refusal,
4 transmit failure.
"""

from __future__ import annotations


class ClawxivError(Exception):
    """Base error. Maps to exit code 1 (internal) unless subclassed."""

    exit_code = 1
    category = "internal"


class ValidationFailure(ClawxivError):
    """Bad input, malformed data, or a failed validation gate."""

    exit_code = 2
    category = "validation"


class GateFailure(ValidationFailure):
    """A publication gate (version label, admission, verify) refused."""

    category = "gate"


class SafetyRefusal(ClawxivError):
    """Content-safety refusal. Reserved exit code 3."""

    exit_code = 3
    category = "safety"


class TransmitFailure(ClawxivError):
    """A push/resolve transmission failed after gating."""

    exit_code = 4
    category = "transmit"


class ProviderUnavailable(ClawxivError):
    """Safety provider cannot be reached or is misconfigured.

    Deliberately distinct from any verdict: callers must fail closed and
    never treat this as a pass.
    """


class LockHeld(ClawxivError):
    """Another writer holds the project lock."""
