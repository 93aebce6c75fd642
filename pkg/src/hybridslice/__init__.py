"""Hybrid hard/soft RAN slicing simulator with a DQN slicing agent."""

__version__ = "0.1.0"
