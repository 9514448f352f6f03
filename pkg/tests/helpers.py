import numpy as np

from kfnet.hmtm import ChainState


def make_state(N=4, T=6, R=2, M=1, seed=0, S=None, sigma2=1.0, beta=0.0):
    rng = np.random.default_rng(seed)
    if S is None:
        S = np.repeat(np.arange(M), [len(b) for b in np.array_split(np.arange(T), M)])
    U = rng.normal(size=(M, N, R))
    V = rng.normal(size=(T, R))
    P = np.zeros((M, M))
    P[-1, -1] = 1.0
    for k in range(M - 1):
        P[k, k], P[k, k + 1] = 0.9, 0.1
    return ChainState(
        U=U, V=V, mu_u=rng.normal(size=(M, R)) * 0.1, psi_u=np.full((M, R), 1.5),
        mu_v=rng.normal(size=(M, R)) * 0.1, psi_v=np.full((M, R), 2.0), beta=beta,
        sigma2=np.full(M, sigma2), S=np.asarray(S), P=P,
    )


def symmetric_layers(T, N, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T, N, N)) * scale
    return X + X.transpose(0, 2, 1)
