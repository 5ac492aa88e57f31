"""Near-optimal tests for composite hypotheses over convex parameter sets."""

__version__ = "0.1.0"
