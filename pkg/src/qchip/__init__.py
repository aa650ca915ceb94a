"""Characterization and control of a voltage-controlled waveguide-array chip.

The package models a three-waveguide photonic device whose Hamiltonian depends
on four electrode voltages.  Three model families map voltages to measured
outputs: a graybox (neural network feeding fixed quantum-mechanics layers), a
whitebox (parametric tridiagonal Hamiltonian with linear voltage dependence),
and a blackbox (plain neural network).  A software simulator stands in for the
physical chip, and gradient-based controllers search for voltages realizing
target output distributions or target unitaries.
"""

__version__ = "0.1.0"
