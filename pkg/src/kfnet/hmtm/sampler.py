"""Full-conditional updates of the hidden Markov multilinear tensor model.

Each ``*_conditional`` function returns the parameters of a full
conditional without drawing from it; the matching ``sample_*`` function
draws, writes the result into the state and returns it. ``data_weight``
scales every likelihood contribution: 1 is the posterior, 0 turns the data
off and leaves only the prior (used for prior-reproduction checks).
"""

from __future__ import annotations

import warnings

import numpy as np

from ..errors import NumericalError
from .ffbs import sample_states
from .model import ChainState, HyperParams

LOG_2PI = float(np.log(2.0 * np.pi))
_MIN_BETA_SHAPE = 1e-3


def sample_inv_gamma(rng: np.random.Generator, shape, rate):
    """Draw from IG(shape, rate) (density ∝ x^(-shape-1) exp(-rate/x))."""
    rate = np.asarray(rate, dtype=float)
    return rate / rng.standard_gamma(shape, size=rate.shape)


def gram_schmidt(U: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Classical Gram-Schmidt without normalisation.

    Column j becomes itself minus its projections on the already processed
    columns, so the first column is untouched and column lengths are not
    rescaled. A second pass runs if an off-diagonal entry of the Gram matrix
    still exceeds ``tol``.
    """
    U = np.asarray(U, dtype=float)
    out = _gs_pass(U)
    G = out.T @ out
    if np.abs(G - np.diag(np.diag(G))).max(initial=0.0) > tol:
        out = _gs_pass(out)
    return out


def _gs_pass(U):
    N, R = U.shape
    Q = np.empty_like(U)
    for j in range(R):
        col = U[:, j]
        v = col.copy()
        for k in range(j):
            qk = Q[:, k]
            v -= (qk @ col) / (qk @ qk) * qk
        norm = np.sqrt(v @ v)
        if norm == 0.0 or norm <= 1e-10 * np.sqrt(col @ col):
            raise NumericalError(f"Gram-Schmidt: column {j} is linearly dependent on earlier columns")
        Q[:, j] = v
    return Q


def _draw_rows(rng, mean, cov, what):
    """Rows of ``mean`` plus iid N(0, cov) noise."""
    cov = 0.5 * (cov + cov.T)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"{what}: posterior covariance not positive definite (condition number {np.linalg.cond(cov):.3g})"
        ) from None
    return mean + rng.standard_normal(mean.shape) @ chol.T


def _posterior_cov(Q, psi, sigma2, what):
    prec = Q / sigma2 + np.diag(1.0 / psi)
    try:
        cov = np.linalg.inv(prec)
    except np.linalg.LinAlgError:
        raise NumericalError(
            f"{what}: singular posterior precision (condition number {np.linalg.cond(prec):.3g})"
        ) from None
    return 0.5 * (cov + cov.T)


def regime_layers(S: np.ndarray, m: int) -> np.ndarray:
    return np.flatnonzero(S == m)


def regime_means(U_m: np.ndarray, V: np.ndarray) -> np.ndarray:
    """``U_m diag(V[t]) U_m'`` for each row of ``V``, shape (len(V), N, N)."""
    return (U_m[None, :, :] * V[:, None, :]) @ U_m.T


# ------------------------------------------------- latent positions U_m


def psi_u_conditional(U_m: np.ndarray, hyper: HyperParams):
    N = U_m.shape[0]
    return (hyper.u0 + N) / 2.0, ((U_m * U_m).sum(axis=0) + hyper.u1) / 2.0


def mu_u_conditional(U_m: np.ndarray, psi_m: np.ndarray, hyper: HyperParams):
    N, R = U_m.shape
    return (U_m.sum(axis=0) + hyper.mu0u(R)) / (N + 1), psi_m / (N + 1)


def U_conditional(state: ChainState, B: np.ndarray, m: int, hyper: HyperParams, data_weight: float = 1.0):
    """Mean (N, R) and shared row covariance (R, R) of the U_m update.

    The current ``U_m`` plays the role of the right-hand factor, so the
    update is a row-wise regression of ``B_t - beta`` on ``U_m diag(V_t)``
    over the layers of regime m.
    """
    idx = regime_layers(state.S, m)
    U = state.U[m]
    Vm = state.V[idx]
    Q = (U.T @ U) * (Vm.T @ Vm) * data_weight
    W = (B[idx] - state.beta) @ U
    L = (W * Vm[:, None, :]).sum(axis=0) * data_weight
    psi = state.psi_u[m]
    cov = _posterior_cov(Q, psi, state.sigma2[m], f"U[{m}]")
    mean = (L / state.sigma2[m] + state.mu_u[m] / psi) @ cov
    return mean, cov


def sample_psi_u(state, m, hyper, rng):
    shape, rate = psi_u_conditional(state.U[m], hyper)
    state.psi_u[m] = sample_inv_gamma(rng, shape, rate)
    return state.psi_u[m]


def sample_mu_u(state, m, hyper, rng):
    mean, var = mu_u_conditional(state.U[m], state.psi_u[m], hyper)
    state.mu_u[m] = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
    return state.mu_u[m]


def sample_U(state, B, m, hyper, rng, data_weight=1.0):
    mean, cov = U_conditional(state, B, m, hyper, data_weight)
    state.U[m] = gram_schmidt(_draw_rows(rng, mean, cov, f"U[{m}]"))
    return state.U[m]


def sample_latent_positions(state, B, m, hyper, rng, data_weight=1.0):
    """Regime-m update of (psi_u, mu_u, U), followed by orthogonalisation."""
    if not np.any(state.S == m):
        raise NumericalError(f"regime {m} has no layers")
    psi = sample_psi_u(state, m, hyper, rng)
    mu = sample_mu_u(state, m, hyper, rng)
    U = sample_U(state, B, m, hyper, rng, data_weight)
    return psi, mu, U


# ----------------------------------------------- layer weights for regime m


def psi_v_conditional(V_m: np.ndarray, T: int, hyper: HyperParams):
    return (hyper.v0 + T) / 2.0, ((V_m * V_m).sum(axis=0) + hyper.v1) / 2.0


def mu_v_conditional(V_m: np.ndarray, psi_m: np.ndarray, hyper: HyperParams):
    T_m, R = V_m.shape
    return (V_m.sum(axis=0) + hyper.mu0v(R)) / (T_m + 1), psi_m / (T_m + 1)


def V_conditional(state: ChainState, B: np.ndarray, m: int, hyper: HyperParams, data_weight: float = 1.0):
    """Mean (T_m, R) and row covariance (R, R) of the regime-m layer weights."""
    idx = regime_layers(state.S, m)
    U = state.U[m]
    G = U.T @ U
    Q = G * G * data_weight
    W = (B[idx] - state.beta) @ U
    L = (W * U[None, :, :]).sum(axis=1) * data_weight
    psi = state.psi_v[m]
    cov = _posterior_cov(Q, psi, state.sigma2[m], f"V (regime {m})")
    mean = (L / state.sigma2[m] + state.mu_v[m] / psi) @ cov
    return mean, cov


def sample_psi_v(state, m, hyper, rng):
    idx = regime_layers(state.S, m)
    shape, rate = psi_v_conditional(state.V[idx], state.T, hyper)
    state.psi_v[m] = sample_inv_gamma(rng, shape, rate)
    return state.psi_v[m]


def sample_mu_v(state, m, hyper, rng):
    idx = regime_layers(state.S, m)
    mean, var = mu_v_conditional(state.V[idx], state.psi_v[m], hyper)
    state.mu_v[m] = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
    return state.mu_v[m]


def sample_V(state, B, m, hyper, rng, data_weight=1.0):
    idx = regime_layers(state.S, m)
    mean, cov = V_conditional(state, B, m, hyper, data_weight)
    state.V[idx] = _draw_rows(rng, mean, cov, f"V (regime {m})")
    return state.V[idx]


def sample_latent_weights(state, B, m, hyper, rng, data_weight=1.0):
    """Regime-m update of (psi_v, mu_v, V rows of the regime's layers)."""
    if not np.any(state.S == m):
        raise NumericalError(f"regime {m} has no layers")
    psi = sample_psi_v(state, m, hyper, rng)
    mu = sample_mu_v(state, m, hyper, rng)
    V = sample_V(state, B, m, hyper, rng, data_weight)
    return psi, mu, V


# ------------------------------------------------------------ beta, sigma2


def beta_conditional(state: ChainState, B: np.ndarray, hyper: HyperParams, data_weight: float = 1.0):
    """Mean and variance of the normal full conditional of the intercept."""
    N = state.N
    resid_sums = (B - state.layer_means()).sum(axis=(1, 2))
    inv_s2 = 1.0 / state.sigma2[state.S]
    B1 = 1.0 / (1.0 / hyper.beta_var + data_weight * N * N * inv_s2.sum())
    b1 = B1 * (hyper.beta_mean / hyper.beta_var + data_weight * (resid_sums * inv_s2).sum())
    return b1, B1


def sample_beta(state, B, hyper, rng, data_weight=1.0):
    b1, B1 = beta_conditional(state, B, hyper, data_weight)
    state.beta = float(b1 + np.sqrt(B1) * rng.standard_normal())
    return state.beta


def sigma2_conditional(state: ChainState, B: np.ndarray, m: int, hyper: HyperParams, data_weight: float = 1.0):
    idx = regime_layers(state.S, m)
    N = state.N
    resid = B[idx] - state.beta - regime_means(state.U[m], state.V[idx])
    ssr = float((resid * resid).sum())
    shape = (hyper.c0 + data_weight * N * N * len(idx)) / 2.0
    rate = (hyper.d0 + data_weight * ssr) / 2.0
    return shape, rate


def sample_sigma2(state, B, m, hyper, rng, data_weight=1.0):
    shape, rate = sigma2_conditional(state, B, m, hyper, data_weight)
    state.sigma2[m] = float(sample_inv_gamma(rng, shape, rate))
    return state.sigma2[m]


# ------------------------------------------------------------ state path


def log_layer_likelihood(state: ChainState, B: np.ndarray, t: int, m: int) -> float:
    """iid normal log density of all N*N entries of layer t under regime m."""
    N = state.N
    resid = B[t] - state.beta - regime_means(state.U[m], state.V[t : t + 1])[0]
    s2 = state.sigma2[m]
    return float(-0.5 * N * N * (LOG_2PI + np.log(s2)) - (resid * resid).sum() / (2.0 * s2))


def loglik_table(state: ChainState, B: np.ndarray) -> np.ndarray:
    """``table[t, m]`` = log density of layer t under regime m, shape (T, M)."""
    T, N = state.T, state.N
    table = np.empty((T, state.M))
    for m in range(state.M):
        resid = B - state.beta - regime_means(state.U[m], state.V)
        ss = (resid * resid).sum(axis=(1, 2))
        s2 = state.sigma2[m]
        table[:, m] = -0.5 * N * N * (LOG_2PI + np.log(s2)) - ss / (2.0 * s2)
    return table


def path_loglik(state: ChainState, B: np.ndarray) -> float:
    """Log likelihood of all layers under the state's own regime path."""
    table = loglik_table(state, B)
    return float(table[np.arange(state.T), state.S].sum())


def ffbs_sample_states(state, B, rng, data_weight=1.0):
    table = loglik_table(state, B) * data_weight
    state.S = sample_states(table, state.P, rng)
    return state.S


def perturb_singleton_states(S: np.ndarray, w_perturb: np.ndarray, rng: np.random.Generator,
                             in_burnin: bool) -> np.ndarray:
    """Burn-in escape from regimes that hold a single layer.

    When some regime occupies exactly one layer, regime durations are redrawn
    as ``1 + Multinomial(T - M, w_perturb)``, which keeps the path monotone and
    every regime occupied. Otherwise ``S`` is returned unchanged.
    """
    M = len(w_perturb)
    counts = np.bincount(S, minlength=M)
    if not in_burnin or M == 1 or not np.any(counts == 1):
        return S
    T = len(S)
    w = np.asarray(w_perturb, dtype=float)
    durations = 1 + rng.multinomial(T - M, w / w.sum())
    return np.repeat(np.arange(M), durations)


# ------------------------------------------------------------ transitions


def transition_counts(S: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray]:
    """Self-transition and forward-jump counts for regimes 0..M-2."""
    prev, nxt = S[:-1], S[1:]
    stay = np.array([np.sum((prev == k) & (nxt == k)) for k in range(M - 1)], dtype=float)
    jump = np.array([np.sum((prev == k) & (nxt == k + 1)) for k in range(M - 1)], dtype=float)
    return stay, jump


def transition_conditional(S: np.ndarray, M: int, hyper: HyperParams):
    """Beta parameters of each staying probability p_kk, k < M-1."""
    stay, jump = transition_counts(S, M)
    a = hyper.a0 + stay - 1.0
    if np.any(a <= 0):
        warnings.warn("non-positive Beta shape for a staying probability; clamped", RuntimeWarning, stacklevel=2)
        a = np.maximum(a, _MIN_BETA_SHAPE)
    return a, hyper.b0 + jump


def sample_transition_matrix(S: np.ndarray, M: int, hyper: HyperParams, rng: np.random.Generator) -> np.ndarray:
    P = np.zeros((M, M))
    P[M - 1, M - 1] = 1.0
    if M > 1:
        a, b = transition_conditional(S, M, hyper)
        p = rng.beta(a, b)
        k = np.arange(M - 1)
        P[k, k] = p
        P[k, k + 1] = 1.0 - p
    return P
