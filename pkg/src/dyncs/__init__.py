"""Dynamic compressive sensing via approximate message passing.

Recovers sparse, temporally correlated signal time series from
underdetermined linear measurements. The signal model couples a binary
Markov chain on the support with Gauss-Markov amplitude evolution; inference
alternates per-frame AMP with message passing along the temporal chains, in
causal (filtering) or non-causal (smoothing) mode, optionally learning all
model hyperparameters by EM. Support-aware Gaussian smoother/filter oracles
and a synthetic benchmark harness are included.
"""

from .ampcore import DivergenceError, LocalPrior, MatrixOperator, amp_frame
from .em import EmTrace, em_loop, em_update, init_heuristics
from .estimators import DynamicAmp, FrameAmp, SupportAwareSmoother
from .harness import (
    ExperimentGrid,
    ResultTable,
    emit_results,
    run_bg_amp,
    run_dynamics_plane,
    run_phase_plane,
    tnmse,
    tnmse_db,
)
from .model import (
    DynamicDataset,
    GroundTruth,
    ModelParams,
    derive_p10,
    generate_synthetic,
    load_dataset,
    noise_variance_for_snr,
    rho_for_variance,
    save_dataset,
    steady_state_variance,
)
from .oracle import NonConvergenceError, OracleProblem, exact_mmse_small, skf_estimate, sks_estimate
from .posteriors import PosteriorEstimates, compute_posteriors
from .scheduler import SolverConfig, run_filter, run_smooth

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "DivergenceError", "LocalPrior", "MatrixOperator", "amp_frame",
    "EmTrace", "em_loop", "em_update", "init_heuristics",
    "DynamicAmp", "FrameAmp", "SupportAwareSmoother",
    "ExperimentGrid", "ResultTable", "emit_results", "run_bg_amp",
    "run_dynamics_plane", "run_phase_plane", "tnmse", "tnmse_db",
    "DynamicDataset", "GroundTruth", "ModelParams", "derive_p10",
    "generate_synthetic", "load_dataset", "noise_variance_for_snr",
    "rho_for_variance", "save_dataset", "steady_state_variance",
    "NonConvergenceError", "OracleProblem", "exact_mmse_small",
    "skf_estimate", "sks_estimate",
    "PosteriorEstimates", "compute_posteriors",
    "SolverConfig", "run_filter", "run_smooth",
]
