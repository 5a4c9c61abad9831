"""Closed-loop flow control for a pressure-driven three-inlet microfluidic chip.

The package simulates a desk-scale setup in which three pressurised liquid
lines feed a chip that merges them into a single outlet.  A lumped-parameter
nonlinear plant stands in for the rig; a reduced linear model drives a Kalman
filter and a constrained model-predictive controller with an embedded dense
QP solver.  A PI baseline and a scenario harness round out the stack.

Submodules
----------
physchem    hydraulic/pneumatic element laws
params      rig description and lumped coefficients
plant       25-state nonlinear simulator
linmodel    reduced 13-state model, ZOH discretisation, extended form
estimator   Kalman filter on the reduced model
qpsolve     dense active-set QP solver
mpc         constrained incremental MPC
baseline    per-line PI controller
scenarios   scenario schema and built-ins
harness     closed-loop runner, metrics, sweeps
cli         command-line interface
"""

__version__ = "0.1.0"
