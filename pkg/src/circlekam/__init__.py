"""Weak KAM and Aubry–Mather computations for time-periodic Lagrangians on the circle."""

__version__ = "0.1.0"

from .model import GridSpec, Kind, LagrangianSpec, OneForm, TrigPotential  # noqa: E402

__all__ = ["GridSpec", "Kind", "LagrangianSpec", "OneForm", "TrigPotential", "__version__"]
