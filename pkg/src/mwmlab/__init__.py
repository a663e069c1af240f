"""Simulation and analysis toolkit for recurrent PPO agents in a navigation arena."""

__version__ = "0.1.0"
