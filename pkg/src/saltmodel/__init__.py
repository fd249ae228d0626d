"""Switching autoregressive low-rank tensor (SALT) models."""

from .baselines import ArhmmParams, fit_arhmm, param_count
from .datagen import SldsGroundTruth, lorenz_series, nascar, nascar_script, random_rotational_lds, simulate_slds
from .fileio import load_model, load_series, save_model, save_series
from .fit import FitConfig, FitError, FitTrace, fit_em, initialize
from .hmm import (DirichletPrior, HmmPosterior, TransitionModel, forward_backward, forward_backward_log,
                  update_transitions, viterbi)
from .lds import (LdsParams, ModalForm, SteadyState, lds_to_salt, real_modal_form, simulate_lds, solve_dare,
                  truncated_kalman_coeffs, truncation_error_bound)
from .model import SaltParams, ar_filter, e_step, emission_log_likelihoods, latent_trajectory
from .tensor import TuckerFactors, contract_23, materialize, mode_n_matricize, predict_mean, predict_mean_forms

__version__ = "0.1.0"

__all__ = [
    "ArhmmParams",
    "fit_arhmm",
    "param_count",
    "SldsGroundTruth",
    "lorenz_series",
    "nascar",
    "nascar_script",
    "random_rotational_lds",
    "simulate_slds",
    "load_model",
    "load_series",
    "save_model",
    "save_series",
    "FitConfig",
    "FitError",
    "FitTrace",
    "fit_em",
    "initialize",
    "DirichletPrior",
    "HmmPosterior",
    "TransitionModel",
    "forward_backward",
    "forward_backward_log",
    "update_transitions",
    "viterbi",
    "LdsParams",
    "ModalForm",
    "SteadyState",
    "lds_to_salt",
    "real_modal_form",
    "simulate_lds",
    "solve_dare",
    "truncated_kalman_coeffs",
    "truncation_error_bound",
    "SaltParams",
    "ar_filter",
    "e_step",
    "emission_log_likelihoods",
    "latent_trajectory",
    "TuckerFactors",
    "contract_23",
    "materialize",
    "mode_n_matricize",
    "predict_mean",
    "predict_mean_forms",
]
