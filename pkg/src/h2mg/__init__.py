"""Seasonal energy management for islanded hydrogen-battery microgrids.

The package covers the full pipeline:

* ``electrochem`` / ``piecewise`` -- power-dependent hydrogen conversion
  curves from semi-empirical cell models, and their piecewise-linear fits.
* ``grid`` -- microgrid data model and horizon program builder.
* ``solver`` -- standard-form LP/QP/MILP solvers (two-phase simplex,
  ADMM, branch and bound) with an MPS exporter and a SciPy backend for
  large programs.
* ``reference`` -- offline optimal state-of-charge references and online
  Gaussian-kernel reference tracking.
* ``oco`` -- prediction-free online convex optimization with per-expert
  virtual queues and exponential weighting.
* ``sim`` / ``synth`` -- closed-loop dispatch simulation, physical
  reconciliation, method benchmarking, and synthetic scenario generation.
* ``cli`` -- command-line front end.
"""

__version__ = "0.1.0"
