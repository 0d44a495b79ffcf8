"""Reduced-precision emulation, shadow error measurement and instability search for small graphs."""

__version__ = "0.1.0"

from .softfloat import BFLOAT16, BINARY16, BINARY32, BINARY64, FloatFormat, get_format, round_to
from .graph import Graph, GraphBuilder, Trace, backward, forward

__all__ = [
    "__version__",
    "FloatFormat",
    "BINARY16",
    "BFLOAT16",
    "BINARY32",
    "BINARY64",
    "get_format",
    "round_to",
    "Graph",
    "GraphBuilder",
    "Trace",
    "forward",
    "backward",
]
