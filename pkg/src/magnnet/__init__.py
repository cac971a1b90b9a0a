"""Decentralized multi-agent task allocation laboratory.

A 3D grid simulator with heterogeneous ground/aerial agents, reservation
based path planners, centralized baselines (Hungarian, greedy, random)
and a CTDE PPO trainer with a graph-convolutional policy encoder.
"""

__version__ = "0.1.0"
