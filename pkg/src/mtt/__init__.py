"""Multitarget tracking workbench.

Point-target trackers over a shared linear-Gaussian measurement model:
soft association (with and without set-conflict pruning), a hypothesis-tree
tracker with windowed commitment, and belief-propagation existence trackers
in Gaussian and particle flavours.  ``simgen`` holds the scenario library
and Monte Carlo harness; ``metrics`` the set-distance scoring.
"""

__version__ = "0.1.0"

__all__ = [
    "assoc", "bp", "cli", "core", "jpda", "metrics", "mht", "models", "simgen",
]
