"""Simulation and analysis of clocked cold-atom delivery into a nanophotonic waveguide."""
__version__ = "0.1.0"
