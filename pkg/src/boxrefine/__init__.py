"""Iterative 3D box refinement: geometry, mask rendering, the refinement MDP and a numpy DQN."""

__version__ = "0.1.0"
