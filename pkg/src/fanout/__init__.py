"""Simulation of resonance-engineered phase-flip fanout gates."""
__version__ = "0.1.0"
