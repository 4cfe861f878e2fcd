"""Invariant and iterated Kalman filters for contact-aided legged-robot state estimation."""

__version__ = "0.1.0"
