"""Two-stage Bayesian propensity-score estimation of average treatment effects."""

__version__ = "0.1.0"

from .bart import BartConfig, BartForest, Tree, fit_bart_probit, probit_latent_step, tree_log_prior
from .baselines import (EstimateWithCI, EstimationError, bootstrap_ipw, ipw_mle, ipw_point,
                        ipw_sandwich, naive_estimate)
from .data import Dataset, DataError, load_dataset, standardize_continuous, validate
from .diagnostics import (ate_weights, balance_posterior, posterior_mean_weights, weight_summary,
                          weighted_std_diff)
from .mcmc import HMCConfig, TargetDensity, effective_sample_size, rhat, run_hmc
from .outcome import (AtePosterior, BetaParams, OutcomeHyper, ate_posterior,
                      pseudo_population_counts, summarize, total_variance_decomposition)
from .simulation import (ScenarioSpec, StudyConfig, gen_highdim, gen_simple, highdim_spec,
                         preset, run_study, true_ate_oracle)
from .treatment import PriorSpec, PropensityDraws, fit_treatment_model, logistic_log_posterior

__all__ = [
    "AtePosterior", "BartConfig", "BartForest", "BetaParams", "DataError", "Dataset",
    "EstimateWithCI", "EstimationError", "HMCConfig", "OutcomeHyper", "PriorSpec",
    "PropensityDraws", "ScenarioSpec", "StudyConfig", "TargetDensity", "Tree", "ate_posterior",
    "ate_weights", "balance_posterior", "bootstrap_ipw", "effective_sample_size",
    "fit_bart_probit", "fit_treatment_model", "gen_highdim", "gen_simple", "highdim_spec",
    "ipw_mle", "ipw_point", "ipw_sandwich", "load_dataset", "logistic_log_posterior",
    "naive_estimate", "posterior_mean_weights", "preset", "probit_latent_step",
    "pseudo_population_counts", "rhat", "run_hmc", "run_study", "standardize_continuous",
    "summarize", "total_variance_decomposition", "tree_log_prior", "true_ate_oracle", "validate",
    "weight_summary", "weighted_std_diff",
]
