"""Characteristics finite element solver for 2D natural convection.

Velocity, pressure and temperature are advanced by a first-order
characteristics (upwind-composition) time discretization with either the
stable P2/P1/P2 pair or the pressure-stabilized equal-order P1/P1/P1 pair.
Both per-step linear systems are symmetric.  A manufactured-solution
harness measures the discrete-in-time error norms and observed convergence
orders; the ``lgconvect`` CLI drives runs, refinement studies and
projection diagnostics from flat config files.
"""

__version__ = "0.1.0"
