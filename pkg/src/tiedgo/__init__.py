"""Move prediction for Go with reflection-preserving convolutional networks."""

__version__ = "0.1.0"
