"""Simulation and renewal-numerics laboratory for generation counts of a
branching population driven by perturbed random walks."""

from .branching import (CapacityError, DecompositionSample, GenerationCounts,
                        decompose, simulate_counts)
from .experiments import (ExperimentConfig, ExperimentReport, ks_two_sample,
                          run, run_decomposition, run_fdd, run_first_gen_flt,
                          run_self_similarity, trend_verdict)
from .models import (ConditionReport, Family, ModelError, ModelSpec,
                     SlowlyVarying, classify_conditions, make_model)
from .normalization import (NormalizationPlan, prop11_prefactor_log,
                            solve_c_alpha, theorem_prefactor_log)
from .renewal import (BoundConstants, GridFunction, bound_rhs, cdf_grid,
                      estimate_constants, leading_term_log, renewal_grid,
                      v_grid, vj_grid)
from .sampling import Stream, StreamKey, sample_pair, sample_uniform, stream_for
from .stable import (LimitSample, StablePath, StableSpec, char_function,
                     limit_functional, simulate_path, stable_increment)

__version__ = "0.1.0"

__all__ = [
    "CapacityError", "DecompositionSample", "GenerationCounts", "decompose",
    "simulate_counts", "ExperimentConfig", "ExperimentReport", "ks_two_sample",
    "run", "run_decomposition", "run_fdd", "run_first_gen_flt",
    "run_self_similarity", "trend_verdict", "ConditionReport", "Family",
    "ModelError", "ModelSpec", "SlowlyVarying", "classify_conditions",
    "make_model", "NormalizationPlan", "prop11_prefactor_log", "solve_c_alpha",
    "theorem_prefactor_log", "BoundConstants", "GridFunction", "bound_rhs",
    "cdf_grid", "estimate_constants", "leading_term_log", "renewal_grid",
    "v_grid", "vj_grid", "Stream", "StreamKey", "sample_pair",
    "sample_uniform", "stream_for", "LimitSample", "StablePath", "StableSpec",
    "char_function", "limit_functional", "simulate_path", "stable_increment",
    "__version__",
]
