"""Numerical laboratory for quasilinear degenerate PDEs on Hörmander systems."""

from .envelope import (ConvergenceReport, EnvelopeResult, convergence_report,
                       inf_convolution, jensen_probe, semiconvexity_budget,
                       semiconvexity_check, sup_convolution)
from .errors import ProbeAssertionError, ZeroGradientError
from .functions import (Composition, GaugePower, LinearTilt, Polynomial,
                        PolynomialFunction, Quadratic, ShiftedSquareProfile,
                        SmoothFunction, Wrapped)
from .geometry import (DiffeoMap, FlowExitsDomainError, VectorFieldSystem,
                       euclidean_system, exp_flow, flow_jacobian, grushin_system,
                       heisenberg_system, hormander_rank, lie_bracket, make_system,
                       perturbed_operator_convergence, pullback_system)
from .grids import Box, Grid, GridFunction, read_field, write_field, write_field_csv
from .harness import (ComparisonResult, ScenarioReport, TranslationTable,
                      boundary_gap_bound, comparison_check, horizontal_sup_norm,
                      lipschitz_probe, scenario_run, strong_max_probe,
                      translation_max_map)
from .metric import (DistanceOracle, GaugeOracle, GraphOracle, UnreachableTargetError,
                     cc_distance_graph, gauge_distance_heisenberg, nsw_probe,
                     shrunken_domain)
from .operators import (HorizontalJet, Linearization, QuasilinearOperator,
                        chain_rule_bound_probe, check_structure, evaluate_operator,
                        growth_lower_bound, horizontal_jet, infinity_operator,
                        linear_perturbation_bound_probe, linearize_at, make_operator,
                        operator_value, pnorm_operator, sublaplacian_operator)
from .solver import (CertificationError, NonconvergenceError, SolverParams,
                     make_sub_super_pair, residual, solve_dirichlet)

__version__ = "0.1.0"
