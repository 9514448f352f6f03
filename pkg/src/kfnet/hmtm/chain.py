"""Chain initialisation, the Gibbs sweep and the sampling driver."""

from __future__ import annotations

import logging

import numpy as np

from ..errors import ConfigError
from ..tensor import CorrectedTensor
from .model import ChainState, FitResult, HyperParams, ModelConfig
from . import sampler as gs

logger = logging.getLogger(__name__)

_EIG_FLOOR = 1e-6


def as_layers(B) -> np.ndarray:
    """Accept a ``CorrectedTensor`` or a (T, N, N) array."""
    arr = B.B if isinstance(B, CorrectedTensor) else np.asarray(B, dtype=float)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ConfigError(f"expected (T, N, N) layers, got shape {arr.shape}")
    return arr


def equal_partition(T: int, M: int) -> np.ndarray:
    """Contiguous regime labels splitting 0..T-1 into M near-equal blocks."""
    if M > T:
        raise ConfigError(f"cannot split {T} layers into {M} regimes")
    sizes = [len(b) for b in np.array_split(np.arange(T), M)]
    return np.repeat(np.arange(M), sizes)


def init_chain(config: ModelConfig, hyper: HyperParams, B, rng: np.random.Generator | None = None) -> ChainState:
    """Deterministic starting state.

    Regimes start as an equal contiguous partition. Each ``U_m`` holds the top
    ``R`` eigenvectors (by eigenvalue modulus) of the regime's mean layer,
    scaled by the square root of the eigenvalue moduli, and ``V_t`` the
    projection of layer t on those directions. ``rng`` is accepted for API
    symmetry; initialisation does not consume random numbers.
    """
    B = as_layers(B)
    T, N, _ = B.shape
    config.validate(N, T)
    M, R = config.n_regimes, config.latent_dim
    S = equal_partition(T, M)
    U = np.zeros((M, N, R))
    V = np.zeros((T, R))
    mu_u = np.zeros((M, R))
    psi_u = np.zeros((M, R))
    mu_v = np.zeros((M, R))
    psi_v = np.zeros((M, R))
    sigma2 = np.zeros(M)
    for m in range(M):
        idx = np.flatnonzero(S == m)
        mean = B[idx].mean(axis=0)
        w, E = np.linalg.eigh(0.5 * (mean + mean.T))
        top = np.argsort(-np.abs(w), kind="stable")[:R]
        scale2 = np.maximum(np.abs(w[top]), _EIG_FLOOR)
        E = E[:, top]
        U[m] = gs.gram_schmidt(E * np.sqrt(scale2))
        V[idx] = np.einsum("ir,tij,jr->tr", E, B[idx], E) / scale2
        mu_u[m] = U[m].mean(axis=0)
        psi_u[m] = ((U[m] ** 2).sum(axis=0) + hyper.u1) / (hyper.u0 + N)
        mu_v[m] = V[idx].mean(axis=0)
        psi_v[m] = ((V[idx] ** 2).sum(axis=0) + hyper.v1) / (hyper.v0 + T)
        resid = B[idx] - gs.regime_means(U[m], V[idx])
        sigma2[m] = max(float(resid.var()), _EIG_FLOOR)
    P = np.zeros((M, M))
    stay = hyper.a0 / (hyper.a0 + hyper.b0)
    for k in range(M - 1):
        P[k, k], P[k, k + 1] = stay, 1.0 - stay
    P[M - 1, M - 1] = 1.0
    return ChainState(U, V, mu_u, psi_u, mu_v, psi_v, 0.0, sigma2, S, P)


def gibbs_sweep(state: ChainState, B, hyper: HyperParams, rng: np.random.Generator,
                in_burnin: bool = False, data_weight: float = 1.0) -> ChainState:
    """One full sweep; returns a new state and leaves ``state`` untouched.

    Order: latent positions per regime, layer weights per regime, intercept,
    error variances per regime, state path, burn-in perturbation of
    singleton regimes, transition matrix.
    """
    B = as_layers(B)
    s = state.copy()
    M = s.M
    for m in range(M):
        gs.sample_latent_positions(s, B, m, hyper, rng, data_weight)
    for m in range(M):
        gs.sample_latent_weights(s, B, m, hyper, rng, data_weight)
    gs.sample_beta(s, B, hyper, rng, data_weight)
    for m in range(M):
        gs.sample_sigma2(s, B, m, hyper, rng, data_weight)
    gs.ffbs_sample_states(s, B, rng, data_weight)
    s.S = gs.perturb_singleton_states(s.S, hyper.weights(M), rng, in_burnin)
    s.P = gs.sample_transition_matrix(s.S, M, hyper, rng)
    return s


def run_chain(config: ModelConfig, hyper: HyperParams, B, rng: np.random.Generator | None = None,
              callback=None) -> FitResult:
    """Run burn-in plus retained sweeps and collect thinned draws.

    ``rng`` defaults to ``numpy.random.default_rng(config.seed)`` (PCG64).
    ``callback(iteration, state)`` is invoked after every sweep if given.
    """
    B = as_layers(B)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    state = init_chain(config, hyper, B, rng)
    kept, loglik = [], []
    for it in range(config.iterations):
        in_burnin = it < config.burnin
        state = gibbs_sweep(state, B, hyper, rng, in_burnin=in_burnin)
        if callback is not None:
            callback(it, state)
        if not in_burnin and (it - config.burnin) % config.thin == 0:
            kept.append(state)
            loglik.append(gs.path_loglik(state, B))
    logger.debug("kept %d draws (k=%d)", len(kept), config.n_breaks)
    return FitResult.from_states(kept, config, hyper, loglik)
