"""Equilibrium solver and verification harness for core-periphery community formation."""
__version__ = "0.1.0"
