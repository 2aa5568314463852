"""
Error Handling System for the PIP Restoration Toolkit

This module defines the toolkit's exception hierarchy and a centralized
handler that turns exceptions into user-facing messages, suggested actions
and process exit codes.
"""

import logging
import traceback
from typing import Dict, Any, Optional, Callable, List
from dataclasses import dataclass, field
from enum import Enum


class PIPError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PIPError, ValueError):
    """Invalid configuration: bad values, unknown keys, unknown presets."""


class ShapeError(PIPError, ValueError):
    """Tensor shapes that do not fit together."""


class DataError(PIPError, ValueError):
    """Input data that cannot be used (empty frame dirs, mixed sizes, missing grads)."""


class NumericalError(PIPError, FloatingPointError):
    """NaN or Inf produced during optimization."""


class ErrorType(Enum):
    """Enumeration of different error types in the toolkit."""
    CONFIGURATION = "configuration"
    SHAPE = "shape"
    DATA = "data"
    NUMERICAL = "numerical"
    FILE_IO = "file_io"
    UNKNOWN = "unknown"


# Process exit codes per error type
EXIT_CODES: Dict[ErrorType, int] = {
    ErrorType.CONFIGURATION: 2,
    ErrorType.SHAPE: 2,
    ErrorType.DATA: 2,
    ErrorType.FILE_IO: 2,
    ErrorType.NUMERICAL: 3,
    ErrorType.UNKNOWN: 1,
}


@dataclass
class ErrorResponse:
    """Response object containing error information and suggested actions."""
    success: bool
    error_type: ErrorType
    message: str
    technical_details: str
    suggested_action: str
    exit_code: int
    context: Dict[str, Any] = field(default_factory=dict)


class ErrorHandler:
    """Centralized error handling with logging and exit-code mapping."""

    def __init__(self, logger: logging.Logger):
        """Initialize error handler with logger instance."""
        self.logger = logger
        self.error_callbacks: Dict[ErrorType, Callable] = {}
        self.error_count = 0
        self.recent_errors: List[ErrorResponse] = []

    def register_error_callback(self, error_type: ErrorType, callback: Callable):
        """Register a callback function for specific error types."""
        self.error_callbacks[error_type] = callback

    def handle_exception(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> ErrorResponse:
        """Classify an exception and dispatch to the matching handler."""
        if isinstance(error, NumericalError):
            return self.handle_numerical_error(error, context)
        if isinstance(error, ShapeError):
            return self.handle_shape_error(error, context)
        if isinstance(error, ConfigError):
            return self.handle_config_error(error, context)
        if isinstance(error, DataError):
            return self.handle_data_error(error, context)
        if isinstance(error, OSError):
            return self.handle_file_error(error, getattr(error, 'filename', '') or '', context=context)
        return self.handle_unknown_error(error, context)

    def handle_config_error(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> ErrorResponse:
        """Handle invalid configuration values, keys or presets."""
        context = dict(context or {})

        if "unknown" in str(error).lower():
            suggested_action = "Remove or rename the unknown key; the resolved run.cfg of a previous run lists every valid key."
        elif "preset" in str(error).lower():
            suggested_action = "Use one of: pip-default, dip-default, pip-video, pip-inpaint, flat-mlp."
        else:
            suggested_action = "Check the value ranges of the named setting and try again."

        return self._create_error_response(
            error_type=ErrorType.CONFIGURATION,
            message=f"Configuration error: {error}",
            technical_details=str(error),
            suggested_action=suggested_action,
            context=context,
            exception=error
        )

    def handle_shape_error(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> ErrorResponse:
        """Handle incompatible tensor or image shapes."""
        context = dict(context or {})

        if "divisible" in str(error).lower():
            suggested_action = "Pad or crop the input to the stated size, or reduce the number of levels."
        else:
            suggested_action = "Check that the input, ground truth and mask have matching sizes."

        return self._create_error_response(
            error_type=ErrorType.SHAPE,
            message=f"Shape error: {error}",
            technical_details=str(error),
            suggested_action=suggested_action,
            context=context,
            exception=error
        )

    def handle_data_error(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> ErrorResponse:
        """Handle unusable input data."""
        context = dict(context or {})
        return self._create_error_response(
            error_type=ErrorType.DATA,
            message=f"Input data error: {error}",
            technical_details=str(error),
            suggested_action="Check the input files: frames must be non-empty, equal-sized 8-bit PNGs.",
            context=context,
            exception=error
        )

    def handle_numerical_error(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> ErrorResponse:
        """Handle NaN/Inf aborts during optimization."""
        context = dict(context or {})
        return self._create_error_response(
            error_type=ErrorType.NUMERICAL,
            message=f"Numerical abort: {error}",
            technical_details=str(error),
            suggested_action="Lower the learning rate or f_max, or disable learned frequencies.",
            context=context,
            exception=error
        )

    def handle_file_error(self, error: Exception, filepath: str = "", operation: str = "", context: Optional[Dict[str, Any]] = None) -> ErrorResponse:
        """Handle file I/O related errors."""
        context = dict(context or {})
        context.update({"filepath": filepath, "operation": operation})

        if isinstance(error, FileNotFoundError):
            message = f"File not found: {filepath}"
            suggested_action = "Check that the file path is correct and the file exists."
        elif isinstance(error, PermissionError):
            message = f"Permission denied accessing file: {filepath}"
            suggested_action = "Check file permissions of the input and output directories."
        else:
            message = f"File operation error{f' during {operation}' if operation else ''}: {error}"
            suggested_action = "Check the file path and permissions, then try again."

        return self._create_error_response(
            error_type=ErrorType.FILE_IO,
            message=message,
            technical_details=str(error),
            suggested_action=suggested_action,
            context=context,
            exception=error
        )

    def handle_unknown_error(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> ErrorResponse:
        """Handle unexpected errors that don't fit other categories."""
        context = dict(context or {})
        return self._create_error_response(
            error_type=ErrorType.UNKNOWN,
            message=f"Unexpected error: {error}",
            technical_details=f"{type(error).__name__}: {error}",
            suggested_action="Re-run with --log-level DEBUG and inspect run.log.",
            context=context,
            exception=error
        )

    def _create_error_response(
        self,
        error_type: ErrorType,
        message: str,
        technical_details: str,
        suggested_action: str,
        context: Dict[str, Any],
        exception: Exception
    ) -> ErrorResponse:
        """Create a standardized error response object."""
        self.log_error(exception, error_type, context)

        response = ErrorResponse(
            success=False,
            error_type=error_type,
            message=message,
            technical_details=technical_details,
            suggested_action=suggested_action,
            exit_code=EXIT_CODES[error_type],
            context=context
        )

        self.error_count += 1
        self.recent_errors.append(response)

        # Keep only last 50 errors
        if len(self.recent_errors) > 50:
            self.recent_errors = self.recent_errors[-50:]

        if error_type in self.error_callbacks:
            try:
                self.error_callbacks[error_type](response)
            except Exception as callback_error:
                self.logger.error(f"Error in error callback: {callback_error}")

        return response

    def log_error(self, error: Exception, error_type: ErrorType, context: Dict[str, Any]):
        """Log error with context; stack traces only for unexpected errors."""
        if error_type is ErrorType.UNKNOWN:
            self.logger.error(
                f"{type(error).__name__}: {error} (context={context})\n{traceback.format_exc()}"
            )
        else:
            self.logger.error(f"{error_type.value} error: {error} (context={context})")

    def get_error_statistics(self) -> Dict[str, Any]:
        """Get error statistics for batch summaries."""
        error_types: Dict[str, int] = {}
        for error in self.recent_errors:
            key = error.error_type.value
            error_types[key] = error_types.get(key, 0) + 1

        return {
            "total_errors": self.error_count,
            "recent_errors_count": len(self.recent_errors),
            "error_types": error_types,
            "recent_errors": [
                {
                    "type": err.error_type.value,
                    "message": err.message,
                    "exit_code": err.exit_code
                }
                for err in self.recent_errors[-10:]
            ]
        }

    def clear_error_history(self):
        """Clear the error history and reset counters."""
        self.recent_errors.clear()
        self.error_count = 0
        self.logger.info("Error history cleared")
