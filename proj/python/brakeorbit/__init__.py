"""Layered solutions of -Delta u + u = f(u) computed as brake orbits."""

from ._core import (
    Error,
    Nonlinearity,
    RadialGrid,
    classify,
    gradient,
    ground_state,
    potential,
    ray_scan,
    rearrange,
    run,
    verify,
)

__all__ = [
    "Error",
    "Nonlinearity",
    "RadialGrid",
    "classify",
    "gradient",
    "ground_state",
    "potential",
    "ray_scan",
    "rearrange",
    "run",
    "verify",
]
