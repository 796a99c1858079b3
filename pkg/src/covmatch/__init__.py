"""Graph topology identification from SEM covariances by covariance matching.

Candidate graphs are parameterized so that each one reproduces the observed
covariance exactly; structural penalties (hollowness, sparsity) then select
among them. Undirected graphs reduce to a sign vector, directed graphs to an
orthogonal matrix.
"""
from .baselines import (
    EvalReport,
    consensus_graph,
    evaluate,
    kendall_copula_cov,
    nse,
    prune,
    sigmatch,
    sigmatch_stationarity_defect,
)
from .directed import (
    CANDIDATE,
    FRESH,
    DirectedProblem,
    GdSchedule,
    basin_hop,
    basin_hop_candidates,
    build_directed_problem,
    euclidean_grad,
    identify_directed,
    objective_j,
    reconstruct_directed,
    reconstruct_directed_colored,
    riemann_gd,
)
from .errors import CovMatchError
from .experiment import ExperimentConfig, flag_nonidentifiable, grid_search_alpha, run_experiment
from .graphs import Gso, WeightRange, gen_cyclic_directed, gen_dag, gen_undirected, is_acyclic
from .ortho import EigenPair, OrthoPoint, evd_sym, geodesic_sample, ortho_exp, ortho_log, random_orthogonal
from .sem import CovSpec, SemModel, asymptotic_cov, mixing_matrix, sample_cov, sample_data
from .undirected import (
    UndirectedProblem,
    build_problem,
    build_problem_colored,
    identifiability_check,
    objective,
    reconstruct_undirected,
    solve,
    solve_bnb,
    solve_exact,
)

__version__ = "0.1.0"
