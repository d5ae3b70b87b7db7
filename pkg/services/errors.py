"""
Exception hierarchy for the atom-laser transfer simulator.
The CLI maps these onto process exit codes (see main.py).
"""

from typing import Any, Dict, Optional


class TeleportError(Exception):
    """Base class for all simulator failures"""


class ConfigError(TeleportError, ValueError):
    """Invalid or inconsistent physical or numerical parameters"""


class GridMismatchError(TeleportError, ValueError):
    """Two fields that must share a grid, carrier or kind do not"""


class GuardTripError(TeleportError, RuntimeError):
    """A numerical guard (boundary amplitude, NaN) aborted the run"""

    def __init__(self, message: str, t: Optional[float] = None, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.t = t
        self.context = context or {}


class UnitarityError(TeleportError, ArithmeticError):
    """Overlap amplitude above one: the propagation is broken"""


class MetricsError(TeleportError, ValueError):
    """Transfer metrics are undefined for the supplied input"""


class OutputError(TeleportError, OSError):
    """Writing a result file failed"""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path
