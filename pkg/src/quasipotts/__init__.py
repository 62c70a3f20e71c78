"""Bayesian structure learning for Potts/Ising networks with spike-and-slab quasi-posteriors."""
from ._accel import HAVE_NUMBA, USE_NUMBA
from .engine import FitResult, McmcConfig, NodeRunResult, lasso_init, run_all, run_node
from .model import (
    PottsSpec,
    conditional_log_lik_gradient,
    conditional_log_likelihood,
    conditional_pmf,
    exact_log_pmf,
    gibbs_generate,
    pseudo_log_likelihood,
)
from .networks import diagonal_blocks, random_edges, support
from .polyagamma import pg_draw, pg_mean, pg_var
from .prior import Hyperparams, default_hyperparams, log_h, log_prior, sparsify
from .samplers import MalaKernel, NodeState, PolyaGammaKernel
from .summary import (
    coverage_report,
    f1_score,
    phi_matrix,
    pseudo_distance,
    relative_error,
    summarize,
    symmetrize,
    ward_cluster,
)

__version__ = "0.1.0"
