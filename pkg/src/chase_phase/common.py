import hashlib
import json
import logging
import os
import sys
from enum import Enum
from fractions import Fraction
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Optional, Union

import psutil

from src.chase_phase import __version__

Real = Union[float, Fraction]

REAL_FORMAT: str = "{:.17g}"  # 17 significant digits round-trip an IEEE double


def get_project_root() -> Path:
    return Path(__file__).parent.parent.parent


def get_working_dir() -> Path:
    if os.getenv("WORKING_DIR"):
        return Path(os.getenv("WORKING_DIR"))
    else:
        return Path(__file__).parent.parent.parent / "working"


def load_run_defaults() -> dict:
    """
    Load numeric defaults from config/defaults.json.

    Falls back to built-in defaults if the file is missing or invalid,
    so a checkout without the config file keeps working.

    :return: dict keyed by concern ("contfrac", "phase", "critical", "simulation", "verify")
    """
    fallback: dict = {
        "contfrac": {
            "tol": 1e-12,
            "n_max": 1 << 20,
            "divergence_threshold": 1e12,
            "probe_horizon": 10_000_000,
            "bracket_limit": float(1 << 40),
        },
        "phase": {
            "tol": 1e-7,
            "root_test_k_max": 400,
            "root_test_window": 20,
            "hypothesis_ell_max": 200,
            "hypothesis_k_probe": 400,
        },
        "critical": {"t_min": 1e-3, "t_max": 1.0, "tol": 1e-8, "grid_points": 9},
        "simulation": {"batch_size": 50_000, "max_steps": 1_000_000, "max_events": 10_000_000},
        "verify": {
            "quick": {"k_max": 12, "mc_runs": 20_000, "tree_runs": 2_000, "depth_cap": 6, "d": 2},
            "default": {
                "k_max": 30,
                "mc_runs": 200_000,
                "tree_runs": 20_000,
                "depth_cap": 8,
                "d": 2,
            },
            "full": {
                "k_max": 60,
                "mc_runs": 1_000_000,
                "tree_runs": 100_000,
                "depth_cap": 12,
                "d": 2,
            },
        },
    }

    config_path: Path = get_project_root() / "config" / "defaults.json"
    try:
        with open(config_path) as f:
            loaded: dict = json.load(f)
    except (OSError, json.JSONDecodeError):
        return fallback
    # shallow merge per section so a partial file still gets every key
    merged: dict = {}
    for section, values in fallback.items():
        merged[section] = {**values, **loaded.get(section, {})}
    return merged


RUN_DEFAULTS: dict = load_run_defaults()

LOGGER_NAME: str = "CHASE_PHASE"
LOGFILE_NAME: str = "chase-phase.log"
LOG_FORMAT: (
    str
) = "%(asctime)s [%(levelname)s] <%(filename)s:%(lineno)s - %(funcName)s()> %(message)s"


def create_logger(
    name: str,
    logfile_path: Optional[Union[str, Path]] = None,
    max_bytes: int = 10_000_000,
    backup_count: int = 10,
    console_level: Optional[str] = None,
    file_level: Optional[str] = None,
) -> logging.Logger:
    """
    Create a logger with dual output: console (INFO) and file (DEBUG).

    The console handler writes to stderr; stdout carries result documents only.

    Args:
        name: Logger name
        logfile_path: Optional path to log file
        max_bytes: Maximum size of log file before rotation (default: 10MB)
        backup_count: Number of backup files to keep (default: 10)
        console_level: Console log level (default: INFO, overridden by LOG_LEVEL_CONSOLE env var)
        file_level: File log level (default: DEBUG, overridden by LOG_LEVEL_FILE env var)

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    formatter = logging.Formatter(LOG_FORMAT)

    # Set logger to DEBUG to capture everything - handlers will filter
    logger.setLevel(logging.DEBUG)

    if not logger.handlers:
        console_level_str = os.getenv("LOG_LEVEL_CONSOLE", console_level or "INFO").upper()
        console_log_level = getattr(logging, console_level_str, logging.INFO)

        console_handler = logging.StreamHandler(stream=sys.stderr)
        console_handler.setLevel(console_log_level)
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

        if logfile_path:
            file_level_str = os.getenv("LOG_LEVEL_FILE", file_level or "DEBUG").upper()
            file_log_level = getattr(logging, file_level_str, logging.DEBUG)

            if isinstance(logfile_path, str):
                logfile_path = Path(logfile_path)

            try:
                logfile_path.parent.mkdir(parents=True, exist_ok=True)
                file_handler = RotatingFileHandler(
                    filename=str(logfile_path), maxBytes=max_bytes, backupCount=backup_count
                )
                file_handler.setLevel(file_log_level)
                file_handler.setFormatter(formatter)
                logger.addHandler(file_handler)
            except (OSError, PermissionError) as e:
                # If we can't write to the log file, just skip it
                console_handler.setLevel(logging.DEBUG)
                print(f"Warning: Could not create log file at {logfile_path}: {e}", file=sys.stderr)

    return logger


def default_threads() -> int:
    """Worker count used when no --threads flag is given."""
    env_threads = os.getenv("CHASE_PHASE_THREADS")
    if env_threads and env_threads.isdigit() and int(env_threads) > 0:
        return int(env_threads)
    return psutil.cpu_count(logical=True) or 1


def format_real(value: Any) -> str:
    """
    Render a number for output documents.

    Exact rationals print as "p/q" (or "p" when integral), floats with 17 significant
    digits, infinities as "inf".
    """
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if value is None:
        return ""
    x = float(value)
    if x == float("inf"):
        return "inf"
    if x == float("-inf"):
        return "-inf"
    return REAL_FORMAT.format(x)


def to_jsonable(value: Any) -> Any:
    """Recursively convert result structures into JSON-ready values with stable number text."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, (Fraction, float)):
        return format_real(value)
    if hasattr(value, "item") and callable(value.item):
        # numpy scalar
        return to_jsonable(value.item())
    if isinstance(value, Enum):
        return value.value
    return value


def fingerprint(payload: Any) -> str:
    """Stable sha256 fingerprint (first 16 hex digits) of a JSON-able payload."""
    text = json.dumps(to_jsonable(payload), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def version_stamp() -> str:
    return f"chase-phase {__version__}"
