"""Warm-water supply control stack.

Plant simulation, data-driven lifted linear predictors, bounded signal
temporal logic (parsing, monitoring, mixed-integer encoding), an exact
small-scale MIQP solver, and receding-horizon closed-loop drivers.
"""

__version__ = "0.1.0"

from .plant import PlantModel  # noqa: F401
