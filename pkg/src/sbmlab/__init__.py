"""Simulation and numerical verification of occupation-density renormalization
for critical measure-valued branching diffusions in d=2 and d=3."""

__version__ = "0.1.0"
