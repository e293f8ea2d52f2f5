"""Closed-loop, feasibility-aware robotic task generation in a 2-D kinematic world."""

__version__ = "0.1.0"
