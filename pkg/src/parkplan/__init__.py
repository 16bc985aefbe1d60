"""Minimum-time, collision-free parking trajectory planning for a kinematic
bicycle vehicle, via sequential convex programming with an embedded QP solver."""

__version__ = "0.1.0"
