"""Deterministic simulation toolkit for a rotating vision-based tactile gripper."""

__version__ = "0.1.0"
