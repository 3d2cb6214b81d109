"""Numerical laboratory for singular stochastic Volterra equations."""
