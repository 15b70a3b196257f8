"""Numerical construction and verification of pre-semigeodesic coordinates
for affine connections."""

from ._kernels import BACKEND
from .connection import (ConnectionField, MetricField, PhaseState, christoffel_from_metric,
                         connection_from_spec, geodesic_rhs, invert_jacobian, torsion_at,
                         transform_connection_at)
from .errors import (ConditioningError, ConstructionError, ConvergenceError, ExprDomainError,
                     ExprError, ExprSyntaxError, IntegrationError, InversionError, PresemiError,
                     SeedError, SpecError, VerificationError)
from .expr import compile_numpy, evaluate, parse, to_source
from .fixtures import builtin
from .geodesic import (HypersurfaceSeed, TransformGrid, integrate_geodesic, label_axes,
                       shoot_congruence, uniform_tau)
from .ode import OdeProblem, Trajectory, integrate
from .rectify import (PicardConfig, VectorFieldGrid, first_integral_residuals, invert_transform,
                      picard_solve, pushforward_residual, rectify_flow)
from .verify import (Tolerances, check_geodesic_correspondence, check_straight_geodesics,
                     dof_report, equiaffine_check, evaluate_transformed, route_agreement,
                     torsion_tensoriality_residual, verify_grid)

__version__ = "0.1.0"
