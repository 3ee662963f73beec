"""Ruin-theory toolkit: ladder calculus, limit laws near ruin, and exact path simulation."""

__version__ = "0.1.0"
