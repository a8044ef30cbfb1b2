"""
Failure Handling
Error taxonomy for the simulator and structured reporting of failures
"""

from enum import Enum
from typing import Any, Dict, Optional

from ..utils.logger import setup_logger


class FailureType(Enum):
    """Types of simulator failures"""
    SHAPE_ERROR = "shape_error"
    CONFIG_ERROR = "config_error"
    DATA_ERROR = "data_error"
    PARSE_ERROR = "parse_error"
    PROTOCOL_ERROR = "protocol_error"
    CHECKPOINT_ERROR = "checkpoint_error"
    UNDEFINED_BUDGET = "undefined_budget"
    UNDEFINED_METRIC = "undefined_metric"
    SYSTEM_ERROR = "system_error"


class FedNewsRecError(Exception):
    """Base class for every error raised by the simulator"""
    failure_type = FailureType.SYSTEM_ERROR


class ShapeError(FedNewsRecError, ValueError):
    """Raised when tensor dimensions do not agree"""
    failure_type = FailureType.SHAPE_ERROR


class ConfigError(FedNewsRecError, ValueError):
    """Raised for invalid hyperparameters or run settings"""
    failure_type = FailureType.CONFIG_ERROR


class DataError(FedNewsRecError, ValueError):
    """Raised when input data violates a dataset invariant"""
    failure_type = FailureType.DATA_ERROR


class ParseError(DataError):
    """Raised for malformed input lines"""
    failure_type = FailureType.PARSE_ERROR

    def __init__(self, message: str, line_number: Optional[int] = None, path: Optional[str] = None):
        location = ""
        if path is not None:
            location = f"{path}:"
        if line_number is not None:
            location = f"{location}{line_number}: "
        elif location:
            location = f"{location} "
        super().__init__(f"{location}{message}")
        self.line_number = line_number
        self.path = path


class ProtocolError(FedNewsRecError):
    """Raised when federated updates cannot be combined"""
    failure_type = FailureType.PROTOCOL_ERROR


class CheckpointError(FedNewsRecError):
    """Raised when a checkpoint is unreadable or does not match the configuration"""
    failure_type = FailureType.CHECKPOINT_ERROR


class UndefinedBudgetError(FedNewsRecError):
    """Raised when the privacy budget is requested without noise"""
    failure_type = FailureType.UNDEFINED_BUDGET


class UndefinedMetricError(FedNewsRecError):
    """Raised when an impression cannot be scored by a metric"""
    failure_type = FailureType.UNDEFINED_METRIC


_RECOVERY_SUGGESTIONS = {
    FailureType.SHAPE_ERROR: [
        "Check that hyperparameters match the checkpoint or input data",
    ],
    FailureType.CONFIG_ERROR: [
        "Check config file keys against the HyperParams field names",
        "Verify numeric ranges (0 < client_fraction <= 1, 0 <= dropout_rate < 1)",
    ],
    FailureType.DATA_ERROR: [
        "Verify the catalog contains every referenced news id",
        "Check timestamps are non-decreasing per user",
    ],
    FailureType.PARSE_ERROR: [
        "Check the TSV column count and separators on the reported line",
    ],
    FailureType.PROTOCOL_ERROR: [
        "Ensure all client updates were computed against the same model layout",
    ],
    FailureType.CHECKPOINT_ERROR: [
        "Evaluate with the same config the checkpoint was trained with",
        "Re-run training to regenerate the checkpoint",
    ],
    FailureType.UNDEFINED_BUDGET: [
        "Set noise_scale > 0 to obtain a finite privacy budget",
    ],
    FailureType.UNDEFINED_METRIC: [
        "Impressions need at least one clicked and one non-clicked candidate",
    ],
    FailureType.SYSTEM_ERROR: [
        "Review the logs for the full traceback",
    ],
}

EXIT_CODES = {
    FailureType.CONFIG_ERROR: 2,
    FailureType.DATA_ERROR: 3,
    FailureType.PARSE_ERROR: 3,
    FailureType.CHECKPOINT_ERROR: 4,
}


class FailureHandler:
    """Turns exceptions into structured failure records and logs them"""

    def __init__(self):
        self.logger = setup_logger(__name__)

    def classify(self, error: BaseException) -> FailureType:
        if isinstance(error, FedNewsRecError):
            return error.failure_type
        if isinstance(error, FileNotFoundError):
            return FailureType.DATA_ERROR
        # pydantic ValidationError and plain ValueErrors come from config validation
        if isinstance(error, ValueError):
            return FailureType.CONFIG_ERROR
        return FailureType.SYSTEM_ERROR

    def handle(
        self,
        component: str,
        error: BaseException,
        context: Optional[Dict[str, Any]] = None
    ) -> Dict[str, Any]:
        """Build the failure record for `error` raised in `component`"""
        failure_type = self.classify(error)
        error_details = {
            "status": "error",
            "error_type": failure_type.value,
            "component": component,
            "message": str(error),
            "error_class": type(error).__name__,
            "context": context or {},
            "recovery_suggestions": list(_RECOVERY_SUGGESTIONS[failure_type])
        }

        self.logger.error(
            f"{failure_type.value} in {component}: {error}",
            extra={
                "event_type": f"failure.{failure_type.value}",
                "component": component,
                "error_class": type(error).__name__
            }
        )

        return error_details

    def exit_code(self, error: BaseException) -> int:
        return EXIT_CODES.get(self.classify(error), 1)
