"""wkblab: numerical laboratory for semiclassical dispersive analysis."""

__version__ = "0.1.0"
