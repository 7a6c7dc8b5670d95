"""Fixed-time ISS small-gain certification and simulation toolkit."""

__version__ = "0.1.0"
