"""Exceptions raised by the fedsim package."""
from typing import Any


class FedSimError(Exception):
    """Base class for all fedsim errors."""


class ConfigurationError(FedSimError, ValueError):
    """Raised when inputs or settings are inconsistent (shapes, ranges, strategy options)."""


class NumericError(FedSimError, ArithmeticError):
    """Raised when a computation produces a non-finite value.

    Keyword context (layer_index, epoch, round_index, client_id, ...) is stored on the
    instance and appended to the message.
    """

    def __init__(self, message, **context):  # type: (str, **Any) -> None
        self.message = message
        self.context = context
        for key, value in context.items():
            setattr(self, key, value)
        if context:
            details = ', '.join('{}={}'.format(key, context[key]) for key in sorted(context))
            message = '{} ({})'.format(message, details)
        super().__init__(message)

    def with_context(self, **context):  # type: (**Any) -> NumericError
        """Return a copy of this error with additional context attached."""
        merged = dict(self.context)
        merged.update(context)
        return NumericError(self.message, **merged)
