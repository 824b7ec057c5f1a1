"""Adaptive ray sampling for a small neural radiance field, learned with
soft actor-critic, plus the classic heuristic samplers it is compared to.

Everything runs on numpy with a self-contained reverse-mode autodiff core;
see the README for the command-line entry points.
"""

__version__ = "0.1.0"
