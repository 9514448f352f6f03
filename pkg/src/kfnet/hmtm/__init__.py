"""Bayesian hidden Markov multilinear tensor model (HMTM) sampler."""

from .chain import as_layers, equal_partition, gibbs_sweep, init_chain, run_chain
from .ffbs import backward_sample, forward_filter, log_marginal_states, sample_states
from .model import ChainState, FitResult, HyperParams, ModelConfig, state_probabilities
from .storage import load_fit, save_fit
from .sampler import (
    beta_conditional,
    ffbs_sample_states,
    gram_schmidt,
    log_layer_likelihood,
    loglik_table,
    perturb_singleton_states,
    sample_beta,
    sample_latent_positions,
    sample_latent_weights,
    sample_sigma2,
    sample_transition_matrix,
    sigma2_conditional,
    transition_conditional,
)

__all__ = [
    "ChainState", "FitResult", "HyperParams", "ModelConfig",
    "as_layers", "backward_sample", "beta_conditional", "equal_partition", "ffbs_sample_states",
    "forward_filter", "gibbs_sweep", "gram_schmidt", "init_chain", "load_fit", "save_fit", "log_layer_likelihood",
    "log_marginal_states", "loglik_table", "perturb_singleton_states", "run_chain", "sample_beta",
    "sample_latent_positions", "sample_latent_weights", "sample_sigma2", "sample_states",
    "sample_transition_matrix", "sigma2_conditional", "state_probabilities", "transition_conditional",
]
