"""Two-level zeroth-order optimization for performative prediction."""

__version__ = "0.1.0"
