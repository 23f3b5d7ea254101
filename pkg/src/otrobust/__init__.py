"""Probabilistic robustness analysis of F-16 flight controllers.

Joint state/parameter densities are pushed through the closed-loop
nonlinear dynamics along Liouville-equation characteristics, and regulation
quality is scored as the Wasserstein-2 distance between the propagated
ensemble and the trim condition.
"""

__version__ = "0.1.0"
