"""faciesnet: a from-scratch 1D inception network for well-log facies classification."""

__version__ = "0.1.0"
