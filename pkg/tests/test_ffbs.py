import itertools

import numpy as np
import pytest
from scipy.special import logsumexp

from kfnet.errors import NumericalError
from kfnet.hmtm.ffbs import backward_sample, forward_filter, log_marginal_states, sample_states


def bidiagonal(p):
    M = len(p) + 1
    P = np.zeros((M, M))
    P[-1, -1] = 1.0
    for k, pk in enumerate(p):
        P[k, k], P[k, k + 1] = pk, 1 - pk
    return P


def admissible_paths(T, M):
    """All monotone unit-step paths from regime 0 at t=0 to regime M-1 at t=T-1."""
    out = []
    for jumps in itertools.combinations(range(1, T), M - 1):
        S = np.zeros(T, dtype=int)
        for j in jumps:
            S[j:] += 1
        out.append(tuple(S))
    return out


def path_logweight(S, loglik, P):
    w = loglik[0, S[0]]
    for t in range(1, len(S)):
        w += np.log(P[S[t - 1], S[t]]) + loglik[t, S[t]]
    return w


def test_filtered_rows_normalised():
    rng = np.random.default_rng(0)
    lf, _ = forward_filter(rng.normal(size=(7, 3)), bidiagonal([0.8, 0.7]))
    assert np.allclose(np.exp(logsumexp(lf, axis=1)), 1.0)


def test_single_regime_path():
    S = sample_states(np.zeros((5, 1)), np.ones((1, 1)), np.random.default_rng(0))
    assert S.tolist() == [0] * 5


def test_m_equals_t_forces_path():
    rng = np.random.default_rng(1)
    S = sample_states(rng.normal(size=(4, 4)), bidiagonal([0.9, 0.9, 0.9]), rng, size=50)
    assert (S == np.arange(4)).all()


def test_too_few_layers_is_error():
    with pytest.raises(NumericalError):
        sample_states(np.zeros((2, 3)), bidiagonal([0.5, 0.5]), np.random.default_rng(0))


def test_nan_likelihood_is_error():
    table = np.zeros((3, 2))
    table[1, 0] = np.nan
    with pytest.raises(NumericalError):
        forward_filter(table, bidiagonal([0.5]))


def test_extreme_loglik_is_rescaled():
    table = np.array([[-1e5, -1e5 - 3], [-2e5, -2e5 + 1], [-3e5, -3e5 + 2]])
    S = sample_states(table, bidiagonal([0.5]), np.random.default_rng(0), size=100)
    assert (S[:, -1] == 1).all() and (np.diff(S, axis=1) >= 0).all()


def test_paths_monotone_and_terminal():
    rng = np.random.default_rng(2)
    S = sample_states(rng.normal(size=(9, 3)) * 3, bidiagonal([0.7, 0.6]), rng, size=500)
    assert (S[:, 0] == 0).all() and (S[:, -1] == 2).all()
    assert set(np.unique(np.diff(S, axis=1))) <= {0, 1}


def test_t4_m2_frequencies_match_enumeration():
    loglik = np.log(np.array([[0.9, 0.1], [0.5, 0.5], [0.2, 0.8], [0.3, 0.7]]))
    P = bidiagonal([0.6])
    paths = admissible_paths(4, 2)
    assert len(paths) == 3
    logw = np.array([path_logweight(S, loglik, P) for S in paths])
    exact = np.exp(logw - logsumexp(logw))
    n = 100_000
    draws = sample_states(loglik, P, np.random.default_rng(3), size=n)
    freq = np.array([np.mean((draws == np.array(S)).all(axis=1)) for S in paths])
    se = np.sqrt(exact * (1 - exact) / n)
    assert np.all(np.abs(freq - exact) <= 3 * se)


@pytest.mark.parametrize("T, M", [(4, 2), (5, 3), (6, 2), (6, 3)])
def test_log_marginal_matches_path_sum(T, M):
    rng = np.random.default_rng(T * 10 + M)
    loglik = rng.normal(size=(T, M)) * 5
    P = bidiagonal(rng.uniform(0.2, 0.9, M - 1))
    logw = [path_logweight(S, loglik, P) for S in admissible_paths(T, M)]
    assert np.isclose(log_marginal_states(loglik, P), logsumexp(logw), atol=1e-10)


def test_backward_sample_size_none_is_one_path():
    lf, _ = forward_filter(np.zeros((5, 2)), bidiagonal([0.5]))
    S = backward_sample(lf, bidiagonal([0.5]), np.random.default_rng(0))
    assert S.shape == (5,)
