"""Experiment drivers: synthetic Monte Carlo, planar landmark demo and log replay."""
