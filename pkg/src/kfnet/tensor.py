"""Weekly co-occurrence tensors, degree correction and centralities."""

from __future__ import annotations

import csv
import datetime as dt
import json
import shutil
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .corpus import KeyFigureSet
from .errors import TensorInvariantError, ValidationError

DEFAULT_EPOCH = dt.date(2018, 1, 1)


@dataclass(frozen=True)
class WeekIndex:
    t: int
    start_date: dt.date
    end_date: dt.date

    @property
    def label(self) -> str:
        return f"week_{self.t}"


def assign_week(date: dt.date, epoch_start: dt.date = DEFAULT_EPOCH) -> WeekIndex:
    """Week containing ``date``; week 1 starts on ``epoch_start``."""
    days = (date - epoch_start).days
    if days < 0:
        raise ValidationError(f"{date} precedes epoch start {epoch_start}")
    t = days // 7 + 1
    start = epoch_start + dt.timedelta(days=7 * (t - 1))
    return WeekIndex(t, start, start + dt.timedelta(days=6))


def week_range(epoch_start: dt.date, n_weeks: int) -> tuple[WeekIndex, ...]:
    return tuple(
        WeekIndex(t, epoch_start + dt.timedelta(days=7 * (t - 1)), epoch_start + dt.timedelta(days=7 * t - 1))
        for t in range(1, n_weeks + 1)
    )


@dataclass(frozen=True)
class OccurrenceMatrix:
    """Figure-by-article 0/1 incidence for one week."""

    matrix: np.ndarray
    article_ids: tuple[str, ...]
    figures: KeyFigureSet


def build_occurrence_matrix(
    week_articles: Sequence[tuple[str, Iterable[str]]], figures: KeyFigureSet
) -> OccurrenceMatrix:
    """Entry (i, j) is 1 iff figure i is among article j's mentions.

    Mentions of names outside ``figures`` are ignored.
    """
    A = np.zeros((len(figures), len(week_articles)), dtype=np.int64)
    ids = []
    for j, (article_id, mentions) in enumerate(week_articles):
        ids.append(article_id)
        for name in mentions:
            i = figures.index.get(name)
            if i is not None:
                A[i, j] = 1
    return OccurrenceMatrix(A, tuple(ids), figures)


def cooccurrence_slice(A: OccurrenceMatrix | np.ndarray, zero_diagonal: bool = True) -> np.ndarray:
    """``A @ A.T``: entry (i, j) counts articles mentioning both i and j."""
    M = A.matrix if isinstance(A, OccurrenceMatrix) else np.asarray(A)
    Y = M @ M.T
    if zero_diagonal:
        np.fill_diagonal(Y, 0)
    return Y.astype(np.int64)


@dataclass(frozen=True)
class CooccurrenceTensor:
    """``Y`` has shape (T, N, N); layer t is week ``weeks[t]``."""

    Y: np.ndarray
    figures: KeyFigureSet
    weeks: tuple[WeekIndex, ...]

    @property
    def N(self) -> int:
        return self.Y.shape[1]

    @property
    def T(self) -> int:
        return self.Y.shape[0]


def _check_slices(Y: np.ndarray, weeks: Sequence[WeekIndex], article_counts=None, zero_diagonal=True):
    for k in range(Y.shape[0]):
        t = weeks[k].t if weeks else k + 1
        layer = Y[k]
        neg = np.argwhere(layer < 0)
        if neg.size:
            i, j = (int(x) for x in neg[0])
            raise TensorInvariantError(f"negative count at week {t}, entry ({i}, {j})", t, i, j)
        asym = np.argwhere(layer != layer.T)
        if asym.size:
            i, j = sorted(int(x) for x in asym[0])
            raise TensorInvariantError(f"asymmetric slice at week {t}, entry ({i}, {j})", t, i, j)
        if zero_diagonal and np.any(np.diag(layer) != 0):
            i = int(np.flatnonzero(np.diag(layer))[0])
            raise TensorInvariantError(f"non-zero diagonal at week {t}, entry ({i}, {i})", t, i, i)
        if article_counts is not None:
            over = np.argwhere(layer > article_counts[k])
            if over.size:
                i, j = (int(x) for x in over[0])
                raise TensorInvariantError(
                    f"count exceeds {article_counts[k]} articles at week {t}, entry ({i}, {j})", t, i, j
                )


def assemble_tensor(
    weekly_slices: Sequence[np.ndarray],
    figures: KeyFigureSet,
    weeks: Sequence[WeekIndex],
    article_counts: Sequence[int] | None = None,
    zero_diagonal: bool = True,
) -> CooccurrenceTensor:
    """Stack weekly slices and verify every tensor invariant.

    Raises ``TensorInvariantError`` naming the first offending (t, i, j).
    """
    N = len(figures)
    if len(weekly_slices) != len(weeks):
        raise ValidationError(f"{len(weekly_slices)} slices for {len(weeks)} weeks")
    Y = np.zeros((len(weeks), N, N), dtype=np.int64)
    for k, layer in enumerate(weekly_slices):
        layer = np.asarray(layer)
        if layer.shape != (N, N):
            raise TensorInvariantError(f"week {weeks[k].t}: slice shape {layer.shape} != ({N}, {N})", weeks[k].t)
        Y[k] = layer
    _check_slices(Y, weeks, article_counts, zero_diagonal)
    return CooccurrenceTensor(Y, figures, tuple(weeks))


def tensor_from_mentions(
    mentions: Sequence[tuple[str, dt.date, Iterable[str]]],
    figures: KeyFigureSet,
    epoch_start: dt.date = DEFAULT_EPOCH,
    n_weeks: int = 24,
) -> CooccurrenceTensor:
    """Co-occurrence tensor from ``(article_id, date, mention set)`` triples.

    Articles dated outside weeks ``1..n_weeks`` are ignored.
    """
    weeks = week_range(epoch_start, n_weeks)
    per_week: list[list] = [[] for _ in weeks]
    for article_id, date, names in mentions:
        t = assign_week(date, epoch_start).t
        if 1 <= t <= n_weeks:
            per_week[t - 1].append((article_id, names))
    slices = [cooccurrence_slice(build_occurrence_matrix(items, figures)) for items in per_week]
    return assemble_tensor(slices, figures, weeks, article_counts=[len(items) for items in per_week])


def drop_figures(tensor: CooccurrenceTensor, names: Sequence[str]) -> CooccurrenceTensor:
    unknown = [n for n in names if n not in tensor.figures]
    if unknown:
        raise ValidationError(f"cannot drop unknown figure(s): {', '.join(unknown)}")
    drop = set(names)
    keep = [i for i, n in enumerate(tensor.figures.names) if n not in drop]
    figures = KeyFigureSet(tuple(tensor.figures.names[i] for i in keep))
    Y = tensor.Y[:, keep][:, :, keep].copy()
    return CooccurrenceTensor(Y, figures, tensor.weeks)


def degree_correct(Y_t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a symmetric layer into ``B_t = Y_t - Omega_t``.

    ``Omega_t = lam * u u'`` where ``lam`` is the eigenvalue of largest
    modulus (sign kept) and ``u`` its unit eigenvector, oriented so its
    largest-magnitude entry is positive. On a modulus tie the positive
    eigenvalue wins; a tie between equal positive eigenvalues keeps the
    first one and warns, since ``Omega_t`` is then basis dependent.
    """
    Y = np.asarray(Y_t, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {Y.shape}")
    scale = max(1.0, float(np.abs(Y).max(initial=0.0)))
    if not np.allclose(Y, Y.T, rtol=0.0, atol=1e-12 * scale):
        raise ValidationError("degree correction needs a symmetric matrix")
    if Y.size == 0:
        return Y.copy(), Y.copy()
    w, vecs = np.linalg.eigh(Y)
    mod = np.abs(w)
    top = mod.max()
    if top == 0.0:
        return Y.copy(), np.zeros_like(Y)
    tied = np.flatnonzero(mod >= top - 1e-12 * top)
    positive = [k for k in tied if w[k] > 0]
    if positive:
        k = positive[0]
        if len(positive) > 1:
            warnings.warn("repeated principal eigenvalue; degree correction is basis dependent",
                          RuntimeWarning, stacklevel=2)
    else:
        k = tied[0]
    lam = w[k]
    u = vecs[:, k]
    if u[np.argmax(np.abs(u))] < 0:
        u = -u
    Omega = lam * np.outer(u, u)
    return Y - Omega, Omega


@dataclass(frozen=True)
class CorrectedTensor:
    """Degree-corrected layers ``B`` (T, N, N) with the removed ``Omega``."""

    B: np.ndarray
    Omega: np.ndarray | None
    figures: KeyFigureSet
    weeks: tuple[WeekIndex, ...]
    source: CooccurrenceTensor | None = None

    @property
    def N(self) -> int:
        return self.B.shape[1]

    @property
    def T(self) -> int:
        return self.B.shape[0]


def correct_tensor(tensor: CooccurrenceTensor) -> CorrectedTensor:
    B = np.empty(tensor.Y.shape, dtype=np.float64)
    Omega = np.empty_like(B)
    for t in range(tensor.T):
        B[t], Omega[t] = degree_correct(tensor.Y[t])
    return CorrectedTensor(B, Omega, tensor.figures, tensor.weeks, tensor)


def degree_centrality(tensor: CooccurrenceTensor | np.ndarray) -> np.ndarray:
    """Weighted degree (row sums of each layer), shape (N, T)."""
    Y = tensor.Y if isinstance(tensor, CooccurrenceTensor) else np.asarray(tensor)
    return Y.sum(axis=2).T.astype(np.float64)


def betweenness_centrality(tensor: CooccurrenceTensor | np.ndarray) -> np.ndarray:
    """Unnormalised shortest-path betweenness on each binarised layer, shape (N, T)."""
    Y = tensor.Y if isinstance(tensor, CooccurrenceTensor) else np.asarray(tensor)
    T, N, _ = Y.shape
    out = np.zeros((N, T))
    for t in range(T):
        adj = (Y[t] > 0).astype(np.int8)
        np.fill_diagonal(adj, 0)
        G = nx.from_numpy_array(adj)
        scores = nx.betweenness_centrality(G, normalized=False)
        out[:, t] = [scores[i] for i in range(N)]
    return out


# ---------------------------------------------------------------- storage


def write_matrix_csv(path: Path, M: np.ndarray, as_int: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for row in M:
            if as_int:
                handle.write(",".join(str(int(v)) for v in row))
            else:
                handle.write(",".join(repr(float(v)) for v in row))
            handle.write("\n")


def read_matrix_csv(path: Path, dtype=np.float64) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", dtype=dtype, ndmin=2)


def prepare_output_dir(path: str | Path, overwrite: bool = False) -> Path:
    path = Path(path)
    if path.exists() and any(path.iterdir()):
        if not overwrite:
            raise FileExistsError(f"output directory {path} is not empty (use --overwrite)")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _weeks_meta(weeks):
    return [{"t": w.t, "start": w.start_date.isoformat(), "end": w.end_date.isoformat()} for w in weeks]


def _weeks_from_meta(items):
    return tuple(WeekIndex(int(w["t"]), dt.date.fromisoformat(w["start"]), dt.date.fromisoformat(w["end"]))
                 for w in items)


def save_tensor(
    path: str | Path,
    tensor: CooccurrenceTensor | None = None,
    corrected: CorrectedTensor | None = None,
    extra_meta: dict | None = None,
) -> Path:
    """Write a tensor directory: ``meta.json`` plus ``Y_{t}.csv`` / ``B_{t}.csv``.

    ``kind`` in the metadata is ``"counts"`` when count layers are present and
    ``"corrected"`` for real-valued layers that skip degree correction.
    """
    if tensor is None and corrected is None:
        raise ValueError("nothing to save")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    ref = tensor if tensor is not None else corrected
    meta = {
        "kind": "counts" if tensor is not None else "corrected",
        "N": ref.N,
        "T": ref.T,
        "figures": list(ref.figures.names),
        "weeks": _weeks_meta(ref.weeks),
        "has_B": corrected is not None,
    }
    meta.update(extra_meta or {})
    with open(path / "meta.json", "w", encoding="utf-8") as handle:
        json.dump(meta, handle, indent=2, sort_keys=True)
        handle.write("\n")
    for k, week in enumerate(ref.weeks):
        if tensor is not None:
            write_matrix_csv(path / f"Y_{week.t}.csv", tensor.Y[k], as_int=True)
        if corrected is not None:
            write_matrix_csv(path / f"B_{week.t}.csv", corrected.B[k])
    return path


def read_meta(path: str | Path) -> dict:
    with open(Path(path) / "meta.json", encoding="utf-8") as handle:
        return json.load(handle)


def load_tensor(path: str | Path) -> tuple[CooccurrenceTensor | None, CorrectedTensor]:
    """Read a tensor directory.

    Returns ``(counts, corrected)``. For count tensors without stored
    ``B_{t}.csv`` files the corrected layers are recomputed.
    """
    path = Path(path)
    meta = read_meta(path)
    figures = KeyFigureSet(tuple(meta["figures"]))
    weeks = _weeks_from_meta(meta["weeks"])
    N, T = int(meta["N"]), int(meta["T"])
    tensor = None
    if meta["kind"] == "counts":
        layers = [read_matrix_csv(path / f"Y_{w.t}.csv", np.int64).reshape(N, N) for w in weeks]
        tensor = assemble_tensor(layers, figures, weeks)
    elif meta["kind"] != "corrected":
        raise ValidationError(f"{path}: unknown tensor kind {meta['kind']!r}")
    if meta.get("has_B") or tensor is None:
        B = np.stack([read_matrix_csv(path / f"B_{w.t}.csv").reshape(N, N) for w in weeks]) if T else np.zeros((0, N, N))
        Omega = tensor.Y - B if tensor is not None else None
        corrected = CorrectedTensor(B, Omega, figures, weeks, tensor)
    else:
        corrected = correct_tensor(tensor)
    return tensor, corrected


def write_centrality_csv(path: str | Path, values: np.ndarray, figures: KeyFigureSet,
                         weeks: Sequence[WeekIndex]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["figure"] + [w.label for w in weeks])
        for name, row in zip(figures.names, values):
            writer.writerow([name] + [repr(float(v)) for v in row])
