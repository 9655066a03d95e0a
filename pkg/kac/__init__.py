"""
Kac Engine - event-driven Monte Carlo for Kac's particle model of the
homogeneous Boltzmann equation with non-cutoff hard potentials.
"""

__version__ = "0.4.0"
