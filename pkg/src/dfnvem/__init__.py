"""Mixed virtual element solver for Darcy flow in discrete fracture networks."""

__version__ = "0.1.0"
