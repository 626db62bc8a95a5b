"""Normalized Ricci flow laboratory for toric Fano surfaces.

The flow is integrated on the moment polygon through the Legendre transform
of the evolving Kahler potential, where every coefficient of the parabolic
equation stays bounded; states are converted back to log coordinates for
the metric, curvature, and geometric diagnostics.  Five built-in surfaces
cover both expected endpoint types (Kahler-Einstein and shrinking soliton),
and a closed-form Ricci-flat bubble reference backs the obstruction checks.
"""

from .config import RunConfig, parse_config
from .errors import (BlowupSuspectedError, ConfigurationError,
                     DegenerateMetricError, DomainError, FanoflowError,
                     NumericError)
from .flow import FlowProblem, FlowTrace, run
from .metric import MetricState, assemble
from .polytopes import PRESET_NAMES, preset
from .potentials import Grid, PotentialField

__version__ = "0.1.0"

__all__ = [
    "BlowupSuspectedError",
    "ConfigurationError",
    "DegenerateMetricError",
    "DomainError",
    "FanoflowError",
    "FlowProblem",
    "FlowTrace",
    "Grid",
    "MetricState",
    "NumericError",
    "PRESET_NAMES",
    "PotentialField",
    "RunConfig",
    "assemble",
    "parse_config",
    "preset",
    "run",
    "__version__",
]
