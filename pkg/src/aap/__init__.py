"""Action Adaptive Policy: reinforcement learning agents that stay competent under action drift."""

__version__ = "0.1.0"
