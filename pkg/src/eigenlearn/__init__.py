"""Eigenlearning: closed-form learning-curve predictions for kernel regression.

The subpackages cover discrete and spherical domains, rotation-invariant
kernels, exact spectra, exact kernel regression, a Monte Carlo harness and the
analytic predictions (learnability, MSE, covariances, gradients).
"""

__version__ = "0.1.0"
