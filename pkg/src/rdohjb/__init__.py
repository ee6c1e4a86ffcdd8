"""Derivative-free adversarial martingale solver for HJB equations."""

__version__ = "0.1.0"
