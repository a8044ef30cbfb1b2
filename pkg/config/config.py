import os
from typing import Dict, Any

# Logging configuration
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

# Default intra-round client parallelism; results never depend on it
FEDNEWSREC_WORKERS = os.getenv("FEDNEWSREC_WORKERS", "1")

# Evaluate the global model every N federated rounds
FEDNEWSREC_EVAL_EVERY = os.getenv("FEDNEWSREC_EVAL_EVERY", "50")

# Where gen-synth writes and train/evaluate read by default
FEDNEWSREC_DATA_DIR = os.getenv("FEDNEWSREC_DATA_DIR", "data")

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _positive_int(raw: str) -> bool:
    try:
        return int(raw) >= 1
    except ValueError:
        return False


def validate_config() -> None:
    """Validate environment configuration on startup and fail fast if invalid."""
    invalid_env_vars = []

    if LOG_LEVEL.upper() not in _LOG_LEVELS:
        invalid_env_vars.append("LOG_LEVEL")

    if not _positive_int(FEDNEWSREC_WORKERS):
        invalid_env_vars.append("FEDNEWSREC_WORKERS")

    if not _positive_int(FEDNEWSREC_EVAL_EVERY):
        invalid_env_vars.append("FEDNEWSREC_EVAL_EVERY")

    if not FEDNEWSREC_DATA_DIR:
        invalid_env_vars.append("FEDNEWSREC_DATA_DIR")

    if invalid_env_vars:
        raise ValueError(f"Invalid environment variables: {', '.join(invalid_env_vars)}")


def default_workers() -> int:
    return int(FEDNEWSREC_WORKERS)


def default_eval_every() -> int:
    return int(FEDNEWSREC_EVAL_EVERY)


def get_config_summary() -> Dict[str, Any]:
    """Return configuration summary for diagnostics."""
    return {
        "log_level": LOG_LEVEL,
        "workers": FEDNEWSREC_WORKERS,
        "eval_every": FEDNEWSREC_EVAL_EVERY,
        "data_dir": FEDNEWSREC_DATA_DIR
    }
