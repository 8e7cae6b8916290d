"""
Error hierarchy
"""

from typing import Any, List, Optional


class DoeblinError(Exception):
    """Base class for all library errors"""


class InvalidInputError(DoeblinError):
    """
    Rejected input: shape mismatch, out-of-range value, empty data.

    Not a ValueError, so pydantic validators let it through unchanged.
    """


class ConfigError(InvalidInputError):
    """Experiment configuration or input file is unusable"""


class DenseSizeError(InvalidInputError):
    """State space too large for a dense oracle"""

    def __init__(self, cardinality: int, cap: int):
        self.cardinality = cardinality
        self.cap = cap
        super().__init__(f"dense oracle refused: N={cardinality} exceeds cap {cap}")


class NonErgodicKernelError(DoeblinError):
    """Kernel has no unique stationary distribution"""


class SolverError(DoeblinError):
    """A linear solve that should always succeed did not"""


class DivergenceError(DoeblinError):
    """Training parameters left the allowed box"""

    def __init__(self, message: str, iteration: int, records: Optional[List[Any]] = None):
        self.iteration = iteration
        self.records = records or []
        super().__init__(message)
