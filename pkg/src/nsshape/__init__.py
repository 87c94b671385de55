"""Shape optimization for stationary and time-dependent incompressible flow
on 2D triangulated domains."""

__version__ = "0.1.0"
