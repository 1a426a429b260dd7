"""Joint supply/demand management for networks of microgrids.

Average-reward MDP model, RVI Q-learning agents, an exact small-instance
oracle and an experiment harness.
"""

__version__ = "0.1.0"
