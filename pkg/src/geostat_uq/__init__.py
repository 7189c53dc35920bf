"""Low-rank posterior covariance and uncertainty measures for geostatistical inversion."""

from .config import ConfigError, ExperimentConfig, from_dict, load_config
from .criteria import (CriteriaReport, evaluate_criteria, phi_a_identity, phi_a_weighted, phi_c,
                       phi_d_lowrank, phi_e, trace_s_inv)
from .grid import MaternKernel, RegularGrid2D, kernel_eval, kernel_row
from .hydro import HydroModel, HydroSetup, jacobian_matvec, jacobian_rmatvec, measure, solve_flow
from .inversion import (InverseProblem, LinearModel, MapResult, solve_linear_map,
                        solve_quasilinear_map)
from .krylov import ConvergenceError, SolveReport, b_orthonormal_qr, cg, gmres_restarted
from .posterior import (PosteriorRepresentation, apply_fss_inv, apply_post, build_posterior,
                        posterior_variance, trace_fss_inv)
from .prior import EmbeddingError, PriorOperator
from .randeig import GhepProblem, LowRankEigenpairs, lowrank_error_estimate, randomized_ghep
from .raytomo import RaySetup, assemble_h, ray_cells, standard_setup

__version__ = "0.1.0"
