"""Model comparison across break counts."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import NumericalError, ValidationError
from .hmtm import as_layers
from .hmtm.ffbs import log_marginal_states, sample_states
from .hmtm.model import FitResult, HyperParams
from .hmtm.sampler import LOG_2PI, regime_means, sample_inv_gamma, transition_counts

MARGINAL_METHOD = (
    "Chib candidate-point estimate; layer means U_m V_t U_m' fixed at their "
    "posterior means, ordinates of (sigma2, beta, P) from reduced Gibbs runs, states summed "
    "out by the forward recursion"
)
AVG_LOSS_DEFINITION = "posterior mean of the mean squared residual (b - beta - mu)^2 over all entries"


@dataclass(frozen=True)
class ModelScore:
    n_breaks: int
    loglik: float
    log_marginal: float
    waic: float
    avg_loss: float

    def __post_init__(self):
        for name in ("loglik", "log_marginal", "waic", "avg_loss"):
            if not math.isfinite(getattr(self, name)):
                raise NumericalError(f"k={self.n_breaks}: {name} is not finite")


def _pointwise_logdens(fit: FitResult, B: np.ndarray, g: int) -> np.ndarray:
    """log p(b_ijt | draw g), shape (T, N, N)."""
    S = fit.S[g]
    US = fit.U[g][S]
    mu = np.einsum("tir,tr,tjr->tij", US, fit.V[g], US)
    s2 = fit.sigma2[g][S][:, None, None]
    resid = B - fit.beta[g] - mu
    return -0.5 * (LOG_2PI + np.log(s2)) - resid * resid / (2.0 * s2)


def posterior_mean_layers(fit: FitResult) -> np.ndarray:
    """Posterior mean of ``U_m V_t U_m'`` for every regime m and layer t, shape (M, T, N, N).

    Averaging the products rather than ``U`` and ``V`` separately keeps the
    plug-in point free of the scale and sign indeterminacy of the factors.
    """
    M = fit.M
    out = np.zeros((M, fit.V.shape[1], fit.U.shape[2], fit.U.shape[2]))
    for g in range(fit.n_draws):
        for m in range(M):
            out[m] += regime_means(fit.U[g, m], fit.V[g])
    return out / fit.n_draws


def compute_loglik(fit: FitResult, B) -> float:
    """Log likelihood at the posterior-mean parameters on the modal state path.

    Layer means are posterior means of ``U_m V_t U_m'``; ``beta`` and
    ``sigma2`` are posterior means.
    """
    B = as_layers(B)
    if fit.n_draws < 1:
        raise ValidationError("fit has no draws")
    S = fit.modal_path()
    means = posterior_mean_layers(fit)
    fm = _FixedMeans(B, means)
    table = fm.table(float(fit.beta.mean()), fit.sigma2.mean(axis=0))
    return float(fm.on_path(table, S).sum())


def compute_waic(fit: FitResult, B) -> float:
    """WAIC on the deviance scale over every (i, j, t) entry.

    ``lppd = sum log mean_g p(b | theta_g)`` and ``p_waic = sum var_g log p``
    (sample variance across draws).
    """
    B = as_layers(B)
    G = fit.n_draws
    if G < 2:
        raise ValidationError("WAIC needs at least two retained draws")
    # Streaming log-sum-exp plus Welford variance over draws.
    lse = None
    mean = np.zeros(B.shape)
    m2 = np.zeros(B.shape)
    for g in range(G):
        lp = _pointwise_logdens(fit, B, g)
        lse = lp.copy() if lse is None else np.logaddexp(lse, lp)
        delta = lp - mean
        mean += delta / (g + 1)
        m2 += delta * (lp - mean)
    lppd = float((lse - np.log(G)).sum())
    p_waic = float((m2 / (G - 1)).sum())
    return -2.0 * (lppd - p_waic)


def compute_avg_loss(fit: FitResult, B) -> float:
    B = as_layers(B)
    if fit.n_draws < 1:
        raise ValidationError("fit has no draws")
    losses = []
    for g in range(fit.n_draws):
        S = fit.S[g]
        US = fit.U[g][S]
        mu = np.einsum("tir,tr,tjr->tij", US, fit.V[g], US)
        resid = B - fit.beta[g] - mu
        losses.append(float(np.mean(resid * resid)))
    return float(np.mean(losses))


@dataclass(frozen=True)
class MarginalEstimate:
    log_marginal: float
    log_likelihood: float
    log_prior: float
    log_ordinates: dict
    method: str = MARGINAL_METHOD


class _FixedMeans:
    """Sufficient statistics of B against fixed per-regime layer means."""

    def __init__(self, B, means):
        # means: (M, T, N, N)
        self.N = B.shape[1]
        self.T = B.shape[0]
        self.M = means.shape[0]
        diff = B[None] - means
        self.S1 = diff.sum(axis=(2, 3)).T          # (T, M)
        self.SS = (diff * diff).sum(axis=(2, 3)).T  # (T, M)

    def ssr(self, beta):
        return self.SS - 2.0 * beta * self.S1 + self.N * self.N * beta * beta

    def table(self, beta, sigma2):
        n2 = self.N * self.N
        return -0.5 * n2 * (LOG_2PI + np.log(sigma2))[None, :] - self.ssr(beta) / (2.0 * sigma2[None, :])

    def on_path(self, arr, S):
        return arr[np.arange(self.T), S]


def _beta_cond(fm, S, sigma2, hyper):
    inv = 1.0 / sigma2[S]
    B1 = 1.0 / (1.0 / hyper.beta_var + fm.N * fm.N * inv.sum())
    b1 = B1 * (hyper.beta_mean / hyper.beta_var + (fm.on_path(fm.S1, S) * inv).sum())
    return b1, B1


def _sigma2_cond(fm, S, beta, hyper):
    ssr_t = fm.on_path(fm.ssr(beta), S)
    counts = np.bincount(S, minlength=fm.M)
    ssr_m = np.bincount(S, weights=ssr_t, minlength=fm.M)
    return (hyper.c0 + fm.N * fm.N * counts) / 2.0, (hyper.d0 + ssr_m) / 2.0


def _P_cond(S, M, hyper):
    stay, jump = transition_counts(S, M)
    return hyper.a0 + stay, hyper.b0 + jump


def _P_from(p, M):
    P = np.zeros((M, M))
    P[M - 1, M - 1] = 1.0
    k = np.arange(M - 1)
    P[k, k] = p
    P[k, k + 1] = 1.0 - p
    return P


def _log_mean_exp(x):
    x = np.asarray(x)
    top = x.max()
    return float(top + np.log(np.mean(np.exp(x - top))))


def _log_invgamma(x, shape, rate):
    return stats.invgamma.logpdf(x, a=shape, scale=rate)


def chib_log_marginal(B, means: np.ndarray, sigma2_star, beta_star: float, p_star, hyper: HyperParams,
                      rng: np.random.Generator, n_reduced: int = 1000, n_warmup: int = 100) -> MarginalEstimate:
    """Candidate-point marginal likelihood with fixed per-regime layer means.

    Parameters
    ----------
    means : (M, T, N, N) array
        Layer means ``U_m V_t U_m'`` for every regime/layer pair.
    sigma2_star, beta_star, p_star
        Evaluation point; ``p_star`` holds the M-1 staying probabilities.

    The state prior is the non-ergodic chain started in regime 0 jointly with
    the event that the last layer sits in the last regime. Ordinates use
    conjugate Beta(a0 + stays, b0 + jumps) transition conditionals, which is
    the exact conditional under that joint.
    """
    B = as_layers(B)
    fm = _FixedMeans(B, np.asarray(means, dtype=float))
    M = fm.M
    sigma2_star = np.asarray(sigma2_star, dtype=float)
    p_star = np.asarray(p_star, dtype=float)
    P_star = _P_from(p_star, M)

    loglik = log_marginal_states(fm.table(beta_star, sigma2_star), P_star)
    log_prior = float(
        _log_invgamma(sigma2_star, hyper.c0 / 2.0, hyper.d0 / 2.0).sum()
        + stats.norm.logpdf(beta_star, hyper.beta_mean, math.sqrt(hyper.beta_var))
        + stats.beta.logpdf(p_star, hyper.a0, hyper.b0).sum()
    )

    def draw_S(beta, sigma2, P):
        return sample_states(fm.table(beta, sigma2), P, rng)

    def draw_P(S):
        if M == 1:
            return P_star
        a, b = _P_cond(S, M, hyper)
        return _P_from(rng.beta(a, b), M)

    # Block 1: sigma2 ordinate, everything else free.
    beta, sigma2, P = beta_star, sigma2_star.copy(), P_star
    S = draw_S(beta, sigma2, P)
    dens = []
    for it in range(n_warmup + n_reduced):
        b1, B1 = _beta_cond(fm, S, sigma2, hyper)
        beta = b1 + math.sqrt(B1) * rng.standard_normal()
        shape, rate = _sigma2_cond(fm, S, beta, hyper)
        if it >= n_warmup:
            dens.append(_log_invgamma(sigma2_star, shape, rate).sum())
        sigma2 = sample_inv_gamma(rng, shape, rate)
        S = draw_S(beta, sigma2, P)
        P = draw_P(S)
    ord_sigma2 = _log_mean_exp(dens)

    # Block 2: beta ordinate given sigma2*.
    beta, P = beta_star, P_star
    S = draw_S(beta, sigma2_star, P)
    dens = []
    for it in range(n_warmup + n_reduced):
        b1, B1 = _beta_cond(fm, S, sigma2_star, hyper)
        if it >= n_warmup:
            dens.append(stats.norm.logpdf(beta_star, b1, math.sqrt(B1)))
        beta = b1 + math.sqrt(B1) * rng.standard_normal()
        S = draw_S(beta, sigma2_star, P)
        P = draw_P(S)
    ord_beta = _log_mean_exp(dens)

    # Block 3: transition ordinate given sigma2*, beta*.
    ord_P = 0.0
    if M > 1:
        P = P_star
        dens = []
        for it in range(n_warmup + n_reduced):
            S = draw_S(beta_star, sigma2_star, P)
            a, b = _P_cond(S, M, hyper)
            if it >= n_warmup:
                dens.append(stats.beta.logpdf(p_star, a, b).sum())
            P = _P_from(rng.beta(a, b), M)
        ord_P = _log_mean_exp(dens)

    ords = {"sigma2": ord_sigma2, "beta": ord_beta, "P": ord_P}
    for name, v in ords.items():
        if not math.isfinite(v):
            raise NumericalError(f"posterior ordinate of block {name} is not finite ({v})")
    value = loglik + log_prior - (ord_sigma2 + ord_beta + ord_P)
    return MarginalEstimate(float(value), float(loglik), log_prior, ords)


def compute_log_marginal(fit: FitResult, B, hyper: HyperParams | None = None, n_reduced: int = 1000,
                         seed: int | None = None) -> float:
    """Approximate ``log p(B | M_k)``; see :func:`chib_log_marginal`."""
    return log_marginal_estimate(fit, B, hyper, n_reduced, seed).log_marginal


def log_marginal_estimate(fit: FitResult, B, hyper: HyperParams | None = None, n_reduced: int = 1000,
                          seed: int | None = None) -> MarginalEstimate:
    B = as_layers(B)
    hyper = hyper or fit.hyper
    M = fit.M
    means = posterior_mean_layers(fit)
    p_star = np.array([fit.P[:, k, k].mean() for k in range(M - 1)])
    rng = np.random.default_rng([fit.config.seed if seed is None else seed, 1998])
    return chib_log_marginal(B, means, fit.sigma2.mean(axis=0), float(fit.beta.mean()), p_star, hyper, rng,
                             n_reduced=n_reduced)


def score_fit(fit: FitResult, B, hyper: HyperParams | None = None, n_reduced: int = 1000,
              seed: int | None = None) -> ModelScore:
    return ModelScore(
        n_breaks=fit.config.n_breaks,
        loglik=compute_loglik(fit, B),
        log_marginal=compute_log_marginal(fit, B, hyper, n_reduced, seed),
        waic=compute_waic(fit, B),
        avg_loss=compute_avg_loss(fit, B),
    )


def kink_candidates(ks: Sequence[int], log_marginals: Sequence[float]) -> list[int]:
    """Break counts where the log marginal likelihood rises into k and falls after it."""
    lm = dict(zip(ks, log_marginals))
    return [k for k in ks if k - 1 in lm and k + 1 in lm and lm[k] - lm[k - 1] > 0 and lm[k + 1] - lm[k] < 0]


def _checked(scores):
    scores = list(scores)
    if len(scores) < 3:
        raise ValidationError("break-number detection needs scores for at least three break counts")
    ks = [s.n_breaks for s in scores]
    if ks != sorted(ks) or len(set(ks)) != len(ks):
        raise ValidationError("scores must be sorted by strictly increasing k")
    return scores


def detect_break_number(scores: Sequence[ModelScore]) -> int:
    """Break count with the smallest WAIC (smaller k wins ties).

    Warns when the log marginal likelihood sequence shows no kink.
    """
    scores = _checked(scores)
    best = min(scores, key=lambda s: (s.waic, s.n_breaks))
    if not kink_candidates([s.n_breaks for s in scores], [s.log_marginal for s in scores]):
        warnings.warn("no kink in the log marginal likelihoods", RuntimeWarning, stacklevel=2)
    return best.n_breaks


def selection_report(scores: Sequence[ModelScore]) -> dict:
    scores = _checked(scores)
    ks = [s.n_breaks for s in scores]
    lms = [s.log_marginal for s in scores]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        selected = detect_break_number(scores)
    kinks = kink_candidates(ks, lms)
    return {
        "selected_k": selected,
        "criterion": "waic",
        "kink_candidates": kinks,
        "no_kink_warning": not kinks,
        "argmax_log_marginal_k": ks[int(np.argmax(lms))],
        "marginal_likelihood_method": MARGINAL_METHOD,
        "avg_loss_definition": AVG_LOSS_DEFINITION,
        "scores": [asdict(s) for s in scores],
    }


def write_scores_csv(path, scores: Sequence[ModelScore]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["k", "loglik", "log_marginal", "waic", "avg_loss"])
        for s in scores:
            writer.writerow([s.n_breaks, repr(s.loglik), repr(s.log_marginal), repr(s.waic), repr(s.avg_loss)])
