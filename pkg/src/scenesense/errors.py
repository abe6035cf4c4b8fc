"""Exception hierarchy shared by all scenesense modules.

The CLI maps these onto stable exit codes, so new exception types should
subclass one of the four top-level categories below.
"""

from __future__ import annotations


class SceneSenseError(Exception):
    """Base class for all errors raised by this package."""


class InputError(SceneSenseError):
    """Bad user-supplied data or configuration (CLI exit code 2)."""


class ParseError(InputError):
    """A document could not be parsed; message carries file/field context."""


class ValidationError(InputError):
    """Parsed data violates a structural invariant."""


class ConfigError(InputError):
    """Inconsistent or incomplete run configuration."""


class BackendError(SceneSenseError):
    """A model backend failed (CLI exit code 4)."""

    def __init__(self, message: str, request_id: str | None = None):
        if request_id:
            message = f"{message} [request_id={request_id}]"
        super().__init__(message)
        self.request_id = request_id


class AuthError(BackendError):
    """The backend rejected our credentials; never retried."""


class ProtocolError(BackendError):
    """The backend answered with a malformed or inconsistent payload."""


class DegenerateScoreError(SceneSenseError):
    """Every candidate label scored -inf; no argmax is meaningful."""


class TrainingDivergedError(SceneSenseError):
    """Loss or gradients became non-finite during training."""

    def __init__(self, message: str, epoch: int, step: int, loss: float):
        super().__init__(f"{message} (epoch={epoch}, step={step}, loss={loss})")
        self.epoch = epoch
        self.step = step
        self.loss = loss
