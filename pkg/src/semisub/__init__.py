"""Bayesian semi-structured subspace inference.

Fit a low-loss Bezier subspace for the deep part of an additive
structured-plus-network regression model, sample the posterior jointly
over the subspace coordinates and the full structured-coefficient space,
and evaluate the result (predictive density, moments, coverage,
calibration).
"""

from .model import (
    MlpArchitecture,
    LikelihoodHead,
    SsrModel,
    predict_mu,
    log_likelihood,
    grad_log_likelihood,
    log_likelihood_and_grad,
)
from .subspace import (
    ControlPoints,
    TrainConfig,
    BezierSubspace,
    bezier_eval,
    train_subspace,
    build_projection,
    subspace_from_training,
    phi_to_weights,
    save_checkpoint,
    load_checkpoint,
)
from .inference import (
    PriorSpec,
    HmcConfig,
    EssConfig,
    PosteriorSamples,
    log_posterior,
    log_posterior_and_grad,
    hmc_sample,
    ess_sample,
    sample_semi_subspace,
    sample_full_space,
    tempered_log_posterior,
)
from .diagnostics import (
    lppd,
    posterior_moment_diff,
    credible_interval,
    coverage_study,
    wilson_interval,
    hdi,
    auc,
    DiagnosticsReport,
)
from .data import Dataset, SimSpec, generate_toy, generate_simulation, load_csv

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
