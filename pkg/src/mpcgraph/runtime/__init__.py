"""Two-party execution over additive shares with a trusted dealer."""

from .engine import ExecutionResult, Seeds, Trace, execute, split_inputs
from .kernels import BACKEND
from .protocols import ProtocolError
from .ring import Ring

__all__ = ["BACKEND", "ExecutionResult", "ProtocolError", "Ring", "Seeds", "Trace", "execute", "split_inputs"]
