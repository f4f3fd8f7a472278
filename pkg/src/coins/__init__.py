"""Chains of interaction skills: Granger-style interaction tests driving a hierarchy of goal-based skills."""

__version__ = "0.1.0"
