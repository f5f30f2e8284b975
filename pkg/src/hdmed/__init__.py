"""Debiased inference for indirect effects with high-dimensional mediators."""
__version__ = "0.1.0"

from .errors import (
    ConvergenceError, DataError, HdmedError, InfeasibleError, NumericalError,
    SingularMatrixError,
)
from .data import Dataset, SampleMoments, load_csv, load_csv_files, moments, prepare
from .kernels import BACKEND
from .scaled_lasso import ScaledLassoFit, lasso_cd, penalty_level, scaled_lasso
from .l1_solver import (
    DebiasingMatrix, default_tau, estimate_omega_C, estimate_omega_I, solve_row,
)
from .inference import (
    InferenceConfig, MediationEstimate, NoiseEstimates, WaldResult, direct_effect_alt,
    estimate_noise, fit_complete, fit_incomplete, wald,
)
from .baselines import BaselineEstimate, naive_bootstrap, naive_indirect, ols_total_effect
from .simulation import (
    GraphSpec, SimulationReport, SimulationScenario, Truth, generate,
    make_precision_graph, parse_scenario_file, population_variance_oracle, run_experiment,
)
from .cli import resource_path

