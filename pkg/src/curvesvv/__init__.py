"""High-order mesh curving and SVV-stabilised spectral element toolkit."""

__version__ = "0.1.0"
