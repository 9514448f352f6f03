"""Synthetic longitudinal networks with planted regime changes."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .corpus import KeyFigureSet
from .errors import ValidationError
from .tensor import DEFAULT_EPOCH, CorrectedTensor, assemble_tensor, correct_tensor, week_range


@dataclass(frozen=True)
class SynthSpec:
    """Planted block-structure changes.

    ``breakpoints`` are the 1-based layers at which a new regime starts.
    ``blocks`` gives one length-N label vector (labels 1..R) per regime;
    when omitted, :func:`planted_blocks` supplies distinct balanced partitions.
    ``mode="real"`` yields Gaussian layers on the degree-corrected scale,
    ``mode="counts"`` Poisson counts around the (non-negative) block means.
    """

    N: int
    T: int
    R: int = 2
    breakpoints: tuple[int, ...] = ()
    blocks: tuple[tuple[int, ...], ...] | None = None
    within: float = 3.0
    between: float = 0.0
    noise_sd: float = 1.0
    seed: int = 0
    mode: str = "real"

    @property
    def n_regimes(self) -> int:
        return len(self.breakpoints) + 1

    def block_labels(self) -> np.ndarray:
        if self.blocks is None:
            return planted_blocks(self.N, self.R, self.n_regimes, self.seed)
        return np.asarray(self.blocks, dtype=int)

    def validate(self) -> None:
        bp = list(self.breakpoints)
        if any(b < 2 or b > self.T for b in bp) or any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise ValidationError("breakpoints must be strictly increasing within 2..T")
        if self.N < 1 or self.T < 1 or self.R < 1:
            raise ValidationError("N, T and R must be positive")
        if self.noise_sd < 0:
            raise ValidationError("noise_sd must be non-negative")
        if self.mode not in ("real", "counts"):
            raise ValidationError(f"unknown mode {self.mode!r}")
        labels = self.block_labels()
        if labels.shape != (self.n_regimes, self.N):
            raise ValidationError(f"need {self.n_regimes} block label vectors of length {self.N}")
        if labels.min() < 1 or labels.max() > self.R:
            raise ValidationError(f"block labels must lie in 1..{self.R}")
        if self.mode == "counts" and min(self.within, self.between) < 0:
            raise ValidationError("count mode needs non-negative intensities")


def _canonical(labels):
    seen = {}
    return tuple(seen.setdefault(x, len(seen)) for x in labels)


def planted_blocks(N: int, R: int, n_regimes: int, seed: int = 0) -> np.ndarray:
    """Balanced block labels, a different partition for every regime.

    Regime 1 uses contiguous blocks; later regimes are seeded shuffles of it,
    rejected when they reproduce an earlier partition up to relabelling.
    """
    base = np.arange(N) * R // N + 1
    out = [base]
    rng = np.random.default_rng([seed, 7919])
    seen = {_canonical(base)}
    for _ in range(1, n_regimes):
        for _attempt in range(1000):
            cand = rng.permutation(base)
            key = _canonical(cand)
            if key not in seen or R == 1:
                break
        seen.add(key)
        out.append(cand)
    return np.array(out)


def true_states(T: int, breakpoints) -> np.ndarray:
    """0-based regime path implied by 1-based breakpoints."""
    t = np.arange(1, T + 1)
    return np.searchsorted(np.asarray(breakpoints, dtype=int), t, side="right")


def mean_layers(spec: SynthSpec) -> np.ndarray:
    labels = spec.block_labels()
    S = true_states(spec.T, spec.breakpoints)
    means = np.empty((spec.T, spec.N, spec.N))
    for t in range(spec.T):
        z = labels[S[t]]
        same = z[:, None] == z[None, :]
        means[t] = np.where(same, spec.within, spec.between)
        np.fill_diagonal(means[t], 0.0)
    return means


def generate(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Layers (T, N, N) and the true 0-based regime path.

    Layers are symmetric with a zero diagonal. In real mode the noise is
    iid N(0, noise_sd^2) on the upper triangle, mirrored below it; in count
    mode the upper triangle is Poisson around the block means.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = mean_layers(spec)
    T, N = spec.T, spec.N
    iu = np.triu_indices(N, k=1)
    if spec.mode == "real":
        out = means.copy()
        noise = rng.standard_normal((T, len(iu[0]))) * spec.noise_sd
        out[:, iu[0], iu[1]] += noise
        out[:, iu[1], iu[0]] = out[:, iu[0], iu[1]]
    else:
        out = np.zeros((T, N, N), dtype=np.int64)
        draws = rng.poisson(means[:, iu[0], iu[1]])
        out[:, iu[0], iu[1]] = draws
        out[:, iu[1], iu[0]] = draws
    return out, true_states(T, spec.breakpoints)


def synthetic_figures(N: int) -> KeyFigureSet:
    return KeyFigureSet(tuple(f"node_{i + 1:03d}" for i in range(N)))


def to_tensors(spec: SynthSpec, layers: np.ndarray, epoch: dt.date = DEFAULT_EPOCH):
    """Wrap generated layers for storage: ``(counts or None, corrected)``."""
    figures = synthetic_figures(spec.N)
    weeks = week_range(epoch, spec.T)
    if spec.mode == "counts":
        tensor = assemble_tensor(list(layers), figures, weeks)
        return tensor, correct_tensor(tensor)
    return None, CorrectedTensor(np.asarray(layers, dtype=float), None, figures, weeks)
