"""Waist-articulated quadruped simulation and adversarial imitation training."""

__version__ = "0.1.0"
