"""2-D electromagnetic inverse scattering with plug-and-play diffusion priors."""

from .scene import (
    C_LIGHT,
    EPSILON_0,
    BackgroundSpec,
    GridSpec,
    PropertyMaps,
    Scene,
    SceneError,
    circle_positions,
)
from .scattering import (
    FieldSolver,
    GreensOperators,
    MeasurementSet,
    SolverError,
    SolverOptions,
    add_noise,
    assemble_greens,
    build_contrast,
    contrast_at_frequency,
    contrast_to_properties,
    forward_simulate,
    incident_fields,
    scattered_field,
    solve_total_field,
)

__version__ = "0.1.0"

__all__ = [
    "C_LIGHT",
    "EPSILON_0",
    "BackgroundSpec",
    "GridSpec",
    "PropertyMaps",
    "Scene",
    "SceneError",
    "circle_positions",
    "FieldSolver",
    "GreensOperators",
    "MeasurementSet",
    "SolverError",
    "SolverOptions",
    "add_noise",
    "assemble_greens",
    "build_contrast",
    "contrast_at_frequency",
    "contrast_to_properties",
    "forward_simulate",
    "incident_fields",
    "scattered_field",
    "solve_total_field",
    "__version__",
]
