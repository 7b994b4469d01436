"""Step-level speculative reasoning: analytic speedup models, Monte Carlo checks and a virtual-clock engine."""

__version__ = "0.1.0"
