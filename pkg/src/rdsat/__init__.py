"""Saturated finite-dimensional output feedback for 1-D reaction-diffusion PDEs.

The package is organized as a pipeline: eigensolve the Sturm-Liouville
operator, project actuators and sensor onto the modal basis, synthesize an
observer-based controller, certify local exponential stability through
matrix-inequality feasibility problems, estimate the domain of attraction,
and validate the certificates by high-order modal simulation.
"""

__version__ = "0.1.0"
