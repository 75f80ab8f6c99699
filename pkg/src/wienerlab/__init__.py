"""Numerical laboratory for relaxed Dirichlet problems on structured grids.

Discretizes Lu + mu u = nu for uniformly elliptic L and nonnegative Borel
measures mu, computes harmonic and mu-capacities, approximate Green functions,
Kato norms, Wiener moduli and local energies, and verifies boundary-regularity
and energy-decay estimates empirically in dimensions 2 and 3.
"""

__version__ = "0.1.0"
