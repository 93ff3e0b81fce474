"""Numerical laboratory for rotationally symmetric self-expanders of mean curvature flow."""

from .errors import *  # noqa: F401,F403
from .geometry import ProfileCurve, curvature, expander_residual, shrinker_residual
from .shooting import (DEFAULT, RotationalExpander, ShootingOptions, find_branches, find_delta_star,
                       integrate_profile, solve_expander)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT",
    "ProfileCurve",
    "RotationalExpander",
    "ShootingOptions",
    "curvature",
    "expander_residual",
    "find_branches",
    "find_delta_star",
    "integrate_profile",
    "shrinker_residual",
    "solve_expander",
]
