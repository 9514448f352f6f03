"""Configuration, hyperparameters and chain state of the hidden Markov tensor model.

Regimes are 0-based in code (``S[t] in 0..M-1``); files written for humans
use 1-based regime and week numbers.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    n_breaks: int = 0
    latent_dim: int = 2
    iterations: int = 2000
    burnin: int = 1000
    thin: int = 1
    seed: int = 0

    @property
    def n_regimes(self) -> int:
        return self.n_breaks + 1

    @property
    def n_retained(self) -> int:
        return len(range(self.burnin, self.iterations, self.thin))

    def validate(self, N: int, T: int) -> None:
        if self.n_breaks < 0:
            raise ConfigError("n_breaks must be >= 0")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.n_regimes > T:
            raise ConfigError(f"{self.n_regimes} regimes need at least as many layers, got T={T}")
        if self.latent_dim > N:
            raise ConfigError(f"latent_dim={self.latent_dim} exceeds N={N}")
        if not 0 <= self.burnin < self.iterations:
            raise ConfigError("need 0 <= burnin < iterations")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


@dataclass(frozen=True)
class HyperParams:
    """Prior settings.

    ``u0, u1`` / ``v0, v1`` are the inverse-gamma shape/scale (doubled) of the
    latent-position and layer-weight variances, ``c0, d0`` those of the error
    variance, ``a0, b0`` the Beta prior on staying probabilities and
    ``beta_mean, beta_var`` the normal prior on the intercept.
    """

    u0: float = 10.0
    u1: float = 1.0
    v0: float = 10.0
    v1: float = 1.0
    c0: float = 2.0
    d0: float = 2.0
    a0: float = 9.0
    b0: float = 1.0
    beta_mean: float = 0.0
    beta_var: float = 1.0
    mu0_u: tuple[float, ...] | None = None
    mu0_v: tuple[float, ...] | None = None
    w_perturb: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("u0", "u1", "v0", "v1", "c0", "d0", "a0", "b0", "beta_var"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"hyperparameter {name} must be positive")
        if self.w_perturb is not None and any(not w > 0 for w in self.w_perturb):
            raise ConfigError("perturbation weights must be positive")

    def mu0u(self, R: int) -> np.ndarray:
        return self._vector(self.mu0_u, R, "mu0_u")

    def mu0v(self, R: int) -> np.ndarray:
        return self._vector(self.mu0_v, R, "mu0_v")

    def weights(self, M: int) -> np.ndarray:
        if self.w_perturb is None:
            return np.full(M, 1.0 / M)
        w = np.asarray(self.w_perturb, dtype=float)
        if w.shape != (M,):
            raise ConfigError(f"w_perturb needs {M} entries, got {w.size}")
        return w / w.sum()

    @staticmethod
    def _vector(v, R, name):
        if v is None:
            return np.zeros(R)
        v = np.asarray(v, dtype=float)
        if v.shape != (R,):
            raise ConfigError(f"{name} needs {R} entries, got {v.size}")
        return v

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        kw = {}
        for f in fields(cls):
            if f.name in d:
                v = d[f.name]
                kw[f.name] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


@dataclass
class ChainState:
    """Full sampler state.

    Shapes: ``U`` (M, N, R); ``V`` (T, R) with row t the diagonal of V_t;
    ``mu_u, psi_u, mu_v, psi_v`` (M, R); ``sigma2`` (M,); ``S`` (T,) with
    0-based regimes; ``P`` (M, M) upper bidiagonal.
    """

    U: np.ndarray
    V: np.ndarray
    mu_u: np.ndarray
    psi_u: np.ndarray
    mu_v: np.ndarray
    psi_v: np.ndarray
    beta: float
    sigma2: np.ndarray
    S: np.ndarray
    P: np.ndarray

    @property
    def M(self) -> int:
        return self.U.shape[0]

    @property
    def N(self) -> int:
        return self.U.shape[1]

    @property
    def R(self) -> int:
        return self.U.shape[2]

    @property
    def T(self) -> int:
        return self.V.shape[0]

    def copy(self) -> "ChainState":
        return ChainState(
            self.U.copy(), self.V.copy(), self.mu_u.copy(), self.psi_u.copy(),
            self.mu_v.copy(), self.psi_v.copy(), float(self.beta), self.sigma2.copy(),
            self.S.copy(), self.P.copy(),
        )

    def layer_means(self) -> np.ndarray:
        """``U_{S_t} V_t U_{S_t}'`` for every layer, shape (T, N, N)."""
        US = self.U[self.S]
        return np.einsum("tir,tr,tjr->tij", US, self.V, US)

    def violations(self, tol: float = 1e-8) -> list[str]:
        """Human-readable list of broken state invariants (empty when valid)."""
        out = []
        S, M = self.S, self.M
        if S[0] != 0 or S[-1] != M - 1:
            out.append(f"S must start in regime 0 and end in regime {M - 1}")
        steps = np.diff(S)
        if np.any((steps < 0) | (steps > 1)):
            out.append("S must be non-decreasing with unit steps")
        if len(np.unique(S)) != M:
            out.append("every regime must be occupied")
        for m in range(M):
            G = self.U[m].T @ self.U[m]
            off = np.abs(G - np.diag(np.diag(G))).max(initial=0.0)
            if off > tol:
                out.append(f"U[{m}] columns not orthogonal (max off-diagonal {off:.3g})")
        for name in ("psi_u", "psi_v", "sigma2"):
            if np.any(getattr(self, name) <= 0):
                out.append(f"{name} must be strictly positive")
        P = self.P
        if not np.allclose(P.sum(1), 1.0) or np.any(np.triu(P, 2) != 0) or np.any(np.tril(P, -1) != 0):
            out.append("P must be upper bidiagonal with rows summing to 1")
        if P[M - 1, M - 1] != 1.0:
            out.append("terminal regime must be absorbing")
        return out


def stack_states(states: list[ChainState]) -> dict[str, np.ndarray]:
    names = ("U", "V", "mu_u", "psi_u", "mu_v", "psi_v", "beta", "sigma2", "S", "P")
    return {n: np.array([getattr(s, n) for s in states]) for n in names}


@dataclass
class FitResult:
    """Retained (post burn-in, thinned) draws plus summaries.

    Array attributes carry a leading draw axis of length ``n_draws``.
    """

    config: ModelConfig
    hyper: HyperParams
    U: np.ndarray
    V: np.ndarray
    mu_u: np.ndarray
    psi_u: np.ndarray
    mu_v: np.ndarray
    psi_v: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    S: np.ndarray
    P: np.ndarray
    loglik: np.ndarray
    state_probs: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.state_probs is None:
            self.state_probs = state_probabilities(self.S, self.config.n_regimes)

    @classmethod
    def from_states(cls, states, config, hyper, loglik) -> "FitResult":
        return cls(config=config, hyper=hyper, loglik=np.asarray(loglik, dtype=float), **stack_states(states))

    @property
    def n_draws(self) -> int:
        return self.S.shape[0]

    @property
    def M(self) -> int:
        return self.config.n_regimes

    def draw(self, g: int) -> ChainState:
        return ChainState(
            self.U[g].copy(), self.V[g].copy(), self.mu_u[g].copy(), self.psi_u[g].copy(),
            self.mu_v[g].copy(), self.psi_v[g].copy(), float(self.beta[g]), self.sigma2[g].copy(),
            self.S[g].copy(), self.P[g].copy(),
        )

    @property
    def posterior_U(self) -> np.ndarray:
        return self.U.mean(axis=0)

    @property
    def posterior_V(self) -> np.ndarray:
        return self.V.mean(axis=0)

    def modal_path(self) -> np.ndarray:
        """Most frequently sampled state path (earliest draw wins ties)."""
        paths, first, counts = np.unique(self.S, axis=0, return_index=True, return_counts=True)
        best = max(range(len(paths)), key=lambda k: (counts[k], -first[k]))
        return paths[best].copy()

    def modal_regimes(self) -> np.ndarray:
        """Per-layer regime with the highest posterior probability."""
        return np.argmax(self.state_probs, axis=1)

    def posterior_mean_state(self) -> ChainState:
        """Posterior-mean parameters paired with the modal state path."""
        P = self.P.mean(axis=0)
        return ChainState(
            self.posterior_U, self.posterior_V, self.mu_u.mean(0), self.psi_u.mean(0),
            self.mu_v.mean(0), self.psi_v.mean(0), float(self.beta.mean()),
            self.sigma2.mean(0), self.modal_path(), P,
        )


def state_probabilities(S: np.ndarray, M: int) -> np.ndarray:
    """Fraction of draws in each regime per layer, shape (T, M)."""
    S = np.atleast_2d(S)
    onehot = np.zeros((S.shape[1], M))
    for m in range(M):
        onehot[:, m] = (S == m).sum(axis=0)
    return onehot / S.shape[0]
