"""Reachability-based safe trajectory planning for serial chains using
sphere-based reachable sets and an exact point-to-zonotope signed distance."""

__version__ = "0.1.0"
