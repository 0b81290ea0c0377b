"""Distributionally robust optimal control under mean/variance ambiguity.

The worst-case expected terminal cost over all parameter distributions with a
given mean and variance is minimized through the dual of the inner moment LP,
piecewise-constant control parametrization, forward sensitivities and a
smoothed quadratic-penalty method.
"""

__version__ = "0.1.0"
