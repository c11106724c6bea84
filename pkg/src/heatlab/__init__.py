"""Numerical laboratory for heat equations with singular absorption potentials and measure data."""

from .grid import Box, GridSpec
from .kernel import QuadratureTrail, Tolerances, heat_kernel, heat_potential, kernel_potential_integral
from .measures import Measure, MeasureError, mT_norm, restrict
from .potentials import (BoundedBump, Custom, Hardy, Potential, Product, TimePower, level_truncate,
                         parse_potential, time_truncate, zero)
from .solver import Field, SolverError, reduce, step_solve

__version__ = "0.1.0"
