"""Monte Carlo solvers for anticipated backward stochastic Volterra equations."""

__version__ = "0.1.0"
