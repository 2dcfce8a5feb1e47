"""Minimax persistent-monitoring planner.

Plans periodic visiting sequences and dwell schedules for one agent or a fleet
so the worst-case steady-state estimation uncertainty across a network of
targets is minimized, and validates plans by forward simulation.
"""

__version__ = "0.1.0"
