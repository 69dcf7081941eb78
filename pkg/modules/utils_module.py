"""
Shared utilities module for the celldir CLI tool.
Contains the error hierarchy, metadata persistence and usage logging used across modules.
"""

import json
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict

import numpy as np

# Import from parent directory
import sys
sys.path.append(str(Path(__file__).parent.parent))
from config import USAGE_DIR


# ============================================================================
# ERRORS
# ============================================================================

class CellDirError(Exception):
    """Base class for all celldir errors"""


class DomainError(CellDirError):
    """Mathematical input outside the domain of an operation (e.g. non-finite)"""


class ContractError(CellDirError):
    """Violated precondition: arity, length or shape mismatch"""


class ConfigError(CellDirError):
    """Invalid configuration value or run configuration file"""


class ParseError(CellDirError):
    """Malformed input file; the message names the file and byte offset"""

    def __init__(self, path, offset, message):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path} (byte {offset}): {message}")


class NumericError(CellDirError):
    """Non-finite intermediate value or failed numerical check"""

    def __init__(self, message, layer_index=None):
        self.layer_index = layer_index
        if layer_index is not None:
            message = f"{message} (layer {layer_index})"
        super().__init__(message)


class StateError(CellDirError):
    """Operation called in the wrong order (e.g. backward before forward)"""


class DegenerateOutputError(NumericError):
    """A 2N network output too close to the origin to carry a direction"""


# Exit codes used by the CLI
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def exit_code_for(error):
    """Map an exception to the CLI exit code"""
    if isinstance(error, ParseError):
        return EXIT_DATA
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    if isinstance(error, (DomainError, ContractError, ConfigError, StateError)):
        return EXIT_USAGE
    return EXIT_USAGE


def require_finite(value, what="value"):
    """Raise DomainError unless every element of value is finite"""
    if np.isscalar(value):
        if not math.isfinite(value):
            raise DomainError(f"{what} must be finite, got {value}")
    elif not np.all(np.isfinite(value)):
        raise DomainError(f"{what} must be finite")


# ============================================================================
# METADATA
# ============================================================================

def save_metadata(path, metadata: Dict[str, Any]):
    """Write a metadata dict as stable, sorted JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='\n') as f:
        json.dump(metadata, f, indent=2, sort_keys=True)
        f.write('\n')


def to_degrees(radians):
    """Radians to degrees (scalar or array)"""
    return np.degrees(radians) if not np.isscalar(radians) else math.degrees(radians)


# ============================================================================
# USAGE TRACKING
# ============================================================================

def log_event(action, details=None):
    """Append a usage event to the daily JSONL log"""
    try:
        event = {
            "timestamp": datetime.now().isoformat(),
            "action": action,
            "details": details or {}
        }

        USAGE_DIR.mkdir(parents=True, exist_ok=True)
        log_file = USAGE_DIR / f"usage_{datetime.now().strftime('%Y%m%d')}.jsonl"

        with open(log_file, 'a') as f:
            f.write(json.dumps(event, default=str) + '\n')
    except Exception:
        # Don't fail operations due to logging issues
        pass
