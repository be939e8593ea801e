"""The four simulation models and their competitor estimators."""

from .beta_bernoulli import (
    BetaBernoulliParams,
    BetaBernoulliProblem,
    EmResult,
    bb_em_fit,
    bb_fit_mile,
    bb_loglik,
    bb_marginal_loglik,
    bb_theta_update,
    bb_zhat,
)
from .bsr import (
    BsrParams,
    BsrProblem,
    bsr_fit_mile,
    bsr_loglik,
    bsr_prior_fit,
    bsr_profile_batch,
    bsr_rate_fit,
    default_timestamps,
)
from .gmm import (
    GmmParams,
    GmmProblem,
    gmm_accuracy,
    gmm_em_fit,
    gmm_fit_mile,
    gmm_hard_labels,
    gmm_mixture_loglik,
    gmm_profile_theta,
)
from .log_cauchy import (
    LogCauchyParams,
    LogCauchyProblem,
    lc_fit_mile,
    lc_grad_mu,
    lc_grad_z,
    lc_loglik,
    lc_mom_fit,
    lc_mom_latent,
    lc_update_mu,
    lc_update_z,
)
from .simulate import DEFAULT_TRUE_PARAMS, MODEL_NAMES, simulate_dataset
