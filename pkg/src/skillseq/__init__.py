"""Skill-sequence-dependent hierarchical policy for a drawer-and-block task."""

__version__ = "0.1.0"
