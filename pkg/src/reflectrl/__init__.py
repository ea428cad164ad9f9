"""Jointly trained planner and reflector policies for multi-trial agents."""

__version__ = "0.1.0"
