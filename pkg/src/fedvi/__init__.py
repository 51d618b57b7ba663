"""Simulation library and benchmark harness for federated stochastic
variational-inequality algorithms over synthetic monotone operators."""

from .algorithms import (RunConfig, StepSizePlan, Trajectory, constants_of,
                         estimate_heterogeneity, mean_operator, run_lda,
                         run_lesgd, run_lesgd_hetero, run_lippax, run_lsgd,
                         run_slippax, solve_inner_prox, step_size)
from .gaps import (CocoercivityReport, DriftSnapshot, GapEstimate,
                   check_eg_cocoercivity, client_drift, composite_gap,
                   exact_prox_point, restricted_gap)
from .harness import (ConfigError, ExperimentConfig, RateFit, ResultRow,
                      compare_reduction, fit_rate, run_experiment)
from .operators import (OperatorSpec, PropertyReport, affine_operator,
                        eval_operator, load_affine_text, make_test_problem,
                        op_jacobian, operator_bound_on_ball, regularize,
                        verify_properties)
from .oracles import OracleSpec, noiseless, sample_oracle
from .regularizers import (MirrorState, RegularizerSpec, ZERO_REG, mirror_map,
                           prox, reg_value)
from .rng import RngStream

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
