"""Complex-valued iris recognition: network, IrisCode baseline and verification tools."""

__version__ = "0.1.0"
