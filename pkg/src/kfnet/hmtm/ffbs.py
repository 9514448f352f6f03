"""Forward filtering / backward sampling for non-ergodic changepoint chains.

All recursions run in log space. The chain starts in regime 0 and, following
Chib's changepoint convention, the final layer is pinned to the last regime,
so every sampled path is non-decreasing and occupies all regimes.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError


def _logsumexp(x: np.ndarray, axis: int) -> np.ndarray:
    top = np.max(x, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def _log(P: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(P)


def forward_filter(loglik: np.ndarray, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Filtered regime log-probabilities ``log p(S_t = m | B_1..B_t)``.

    Parameters
    ----------
    loglik : (T, M) array
        ``loglik[t, m]`` is the log density of layer t under regime m.
    P : (M, M) array
        Transition matrix.

    Returns
    -------
    log_filtered : (T, M) array
    log_norm : (T,) array
        One-step predictive log densities; their sum is the log marginal
        likelihood without the terminal-regime constraint.
    """
    loglik = np.asarray(loglik, dtype=float)
    T, M = loglik.shape
    if np.any(np.isnan(loglik)):
        raise NumericalError("NaN in layer log-likelihoods")
    logP = _log(P)
    log_filtered = np.empty((T, M))
    log_norm = np.empty(T)
    log_pred = np.full(M, -np.inf)
    log_pred[0] = 0.0
    for t in range(T):
        if t:
            log_pred = _logsumexp(log_filtered[t - 1][:, None] + logP, axis=0)
        joint = log_pred + loglik[t]
        c = _logsumexp(joint, axis=0)
        if not np.isfinite(c):
            raise NumericalError(f"filtered probabilities degenerate at layer {t + 1}")
        log_filtered[t] = joint - c
        log_norm[t] = c
    return log_filtered, log_norm


def backward_sample(
    log_filtered: np.ndarray, P: np.ndarray, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Draw state paths given filtered probabilities.

    ``S_T`` is fixed to the last regime; earlier states are drawn from
    ``p(S_t = m) ∝ filtered_t(m) P[m, S_{t+1}]``. With ``size`` the draws are
    vectorised over ``size`` independent paths and an array of shape
    ``(size, T)`` is returned.
    """
    T, M = log_filtered.shape
    n = 1 if size is None else size
    logP = _log(P)
    S = np.empty((n, T), dtype=np.int64)
    S[:, T - 1] = M - 1
    if not np.isfinite(log_filtered[T - 1, M - 1]):
        raise NumericalError("terminal regime unreachable; need at least as many layers as regimes")
    for t in range(T - 2, -1, -1):
        logw = log_filtered[t][None, :] + logP[:, S[:, t + 1]].T
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        cdf = np.cumsum(w, axis=1)
        u = rng.random(n) * cdf[:, -1]
        S[:, t] = np.minimum((cdf <= u[:, None]).sum(axis=1), M - 1)
    return S[0] if size is None else S


def sample_states(loglik: np.ndarray, P: np.ndarray, rng: np.random.Generator, size: int | None = None):
    log_filtered, _ = forward_filter(loglik, P)
    return backward_sample(log_filtered, P, rng, size)


def log_marginal_states(loglik: np.ndarray, P: np.ndarray) -> float:
    """``log p(B, S_T = M | theta, P)`` with the state path summed out.

    This is the joint density of the data and the event that the chain ends
    in the last regime, i.e. the sum over admissible paths only. Under a
    Beta prior on the staying probabilities the matching full conditional of
    ``P`` is exactly conjugate.
    """
    log_filtered, log_norm = forward_filter(loglik, P)
    T, M = log_filtered.shape
    return float(log_norm.sum() + log_filtered[T - 1, M - 1])
