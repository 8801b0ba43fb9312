"""Consensus-based optimization toolkit.

Submodules: ``objectives`` (benchmark functions with landscape metadata),
``engine`` (particle dynamics), ``metrics`` (ensemble functionals),
``theory`` (closed-form constants and bounds), ``mfa`` (mean-field
approximation experiments), ``cli`` (command-line entry point).
"""

from . import engine, errors, metrics, mfa, objectives, theory

__version__ = "0.1.0"

__all__ = ["engine", "errors", "metrics", "mfa", "objectives", "theory", "__version__"]
