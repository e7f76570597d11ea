"""Numerical experiments for parabolic obstacle problems with fully nonlinear operators."""

__version__ = "0.1.0"

from .blowup import (BlowupClassifier, BlowupSequence, blowup_densities, classify,
                     fit_half_parabola,
                     fit_quadratic, make_sequence, time_independence_check)
from .errors import (ConfigError, DegenerateFieldError, EmptyRegionError, GridTooSmallError,
                     MultivaluedGraphError, NegativeFieldError, NoBoundaryError,
                     NonUniformSourceError, NotOnBoundaryError, OutOfDomainError, ParobsError,
                     PolicyCycleError, RadiusUnderresolvedError, SolverDivergedError)
from .estimates import (EstimateReport, directional_monotonicity, fit_log_envelope,
                        gradient_dominance, growth_and_nondegeneracy, harnack_ratios,
                        log_envelope_fit, regularity_norms)
from .freeboundary import (ContactSet, FreeBoundaryCloud, cone_test, contact_tolerance, density,
                           extract_contact_set, extract_free_boundary, space_graph, time_graph)
from .grid import (Cylinder, Grid, GridFunction, cylinder_stats, load_grid_function,
                   parabolic_distance, rescale, save_grid_function)
from .operators import (BellmanOperator, EllipticityBounds, bellman, linear, obstacle_transform,
                        pucci_diagonal, trace, verify_ellipticity)
from .solver import (ObstacleSolver, PenaltySchedule, ProblemSpec, SolveReport,
                     continuation_solve, solve_obstacle_direct, solve_penalized)
