"""Truncated Fock-space simulation of three-mode down-conversion and moment-based entanglement witnesses."""

__version__ = "0.1.0"
