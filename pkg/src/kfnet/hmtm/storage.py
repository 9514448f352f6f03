"""Persisting fits: metadata JSON plus a draw trace.

Draws are written either as one JSON-Lines trace (``draws.jsonl``) or as one
JSON file per retained draw (``draws/draw_000000.json``); matrices are nested
row-major lists. Python's float repr round-trips exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from .model import FitResult, HyperParams, ModelConfig

RNG_NAME = "PCG64 via numpy.random.default_rng(seed)"
DRAW_FIELDS = ("U", "V", "mu_u", "psi_u", "mu_v", "psi_v", "beta", "sigma2", "S", "P")
LAYOUTS = ("jsonl", "per-draw")


def _draw_record(fit: FitResult, g: int) -> dict:
    rec = {"index": g, "loglik": float(fit.loglik[g])}
    for name in DRAW_FIELDS:
        value = getattr(fit, name)[g]
        rec[name] = value.tolist() if isinstance(value, np.ndarray) else value.item()
    return rec


def save_fit(path, fit: FitResult, layout: str = "jsonl") -> Path:
    if layout not in LAYOUTS:
        raise ValidationError(f"unknown draw layout {layout!r}; choose from {LAYOUTS}")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "config": fit.config.to_dict(),
        "hyper": fit.hyper.to_dict(),
        "n_draws": fit.n_draws,
        "draw_layout": layout,
        "rng": RNG_NAME,
    }
    (path / "fit.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    if layout == "jsonl":
        with open(path / "draws.jsonl", "w", encoding="utf-8") as handle:
            for g in range(fit.n_draws):
                handle.write(json.dumps(_draw_record(fit, g)) + "\n")
    else:
        ddir = path / "draws"
        ddir.mkdir(exist_ok=True)
        for g in range(fit.n_draws):
            (ddir / f"draw_{g:06d}.json").write_text(json.dumps(_draw_record(fit, g)) + "\n", encoding="utf-8")
    return path


def load_fit(path) -> FitResult:
    path = Path(path)
    meta_path = path / "fit.json"
    if not meta_path.exists():
        raise ValidationError(f"no fit found in {path}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("draw_layout") == "per-draw":
        records = [json.loads(p.read_text(encoding="utf-8")) for p in sorted((path / "draws").glob("draw_*.json"))]
    else:
        with open(path / "draws.jsonl", encoding="utf-8") as handle:
            records = [json.loads(line) for line in handle if line.strip()]
    if len(records) != meta["n_draws"]:
        raise ValidationError(f"expected {meta['n_draws']} draws in {path}, found {len(records)}")
    records.sort(key=lambda r: r["index"])
    arrays = {name: np.array([r[name] for r in records], dtype=np.int64 if name == "S" else float)
              for name in DRAW_FIELDS}
    return FitResult(
        config=ModelConfig.from_dict(meta["config"]),
        hyper=HyperParams.from_dict(meta["hyper"]),
        loglik=np.array([r["loglik"] for r in records], dtype=float),
        **arrays,
    )
