"""Hybrid-reward PPO whose branch weights are set by periodically selected rules."""

__version__ = "0.1.0"
