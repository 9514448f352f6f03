"""Command-line interface: ``kfnet <command> [options]``.

Commands
--------
build-tensor  corpus JSONL -> tensor directory with centralities
synth         planted-break synthetic tensor directory
fit           tensor directory -> HMTM fit directory
select        fits over k = 0..kmax -> score table and selected k
report        fit directory -> plot-ready CSV bundle
rerun         replay any command from its manifest

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import shutil
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .corpus import AliasTable, SurnameLexicon, extract_mentions, filter_and_dedupe, load_articles, mention_table, \
    select_key_figures
from .errors import NumericalError, ValidationError
from .hmtm import HyperParams, ModelConfig, load_fit, run_chain, save_fit
from .hmtm.storage import RNG_NAME
from .selection import score_fit, selection_report, write_scores_csv
from .synth import SynthSpec, generate, to_tensors
from .tensor import (
    assign_week, betweenness_centrality, degree_centrality, drop_figures, load_tensor, prepare_output_dir,
    read_meta, save_tensor, tensor_from_mentions, write_centrality_csv,
)

logger = logging.getLogger("kfnet")

DEFAULT_DROP = "Kim Jong-un,Donald Trump,Moon Jae-in"
MANIFEST = "manifest.json"
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()] if text else []


def _name_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()] if text else []


# ---------------------------------------------------------------- manifests


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _fingerprint(path) -> dict | None:
    if path is None:
        return None
    path = Path(path)
    if path.is_file():
        return {"path": str(path.resolve()), "sha256": _sha256(path)}
    if path.is_dir():
        h = hashlib.sha256()
        for f in sorted(p for p in path.rglob("*") if p.is_file() and p.name != MANIFEST):
            h.update(str(f.relative_to(path)).encode())
            h.update(_sha256(f).encode())
        return {"path": str(path.resolve()), "sha256": h.hexdigest()}
    return {"path": str(path.resolve()), "sha256": None}


_PATH_ARGS = ("input", "out", "aliases", "lexicon", "hyper", "manifest")
_DATE_ARGS = ("window_start", "window_end", "epoch")


def _args_snapshot(args) -> dict:
    snap = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func", "verbose"):
            continue
        if key in _PATH_ARGS and value is not None:
            value = str(Path(value).resolve())
        elif isinstance(value, dt.date):
            value = value.isoformat()
        snap[key] = value
    return snap


def write_manifest(out: Path, args, started: dt.datetime, extra: dict | None = None) -> None:
    manifest = {
        "tool": "kfnet",
        "version": __version__,
        "command": args.command,
        "args": _args_snapshot(args),
        "inputs": {k: _fingerprint(getattr(args, k, None)) for k in ("input", "aliases", "lexicon", "hyper")
                   if getattr(args, k, None) is not None},
        "rng": RNG_NAME,
        "started": started.isoformat(timespec="seconds"),
        "finished": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
    }
    manifest.update(extra or {})
    with open(out / MANIFEST, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2)
        handle.write("\n")


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(obj, handle, indent=2)
        handle.write("\n")


def _hyper(args) -> HyperParams:
    if getattr(args, "hyper", None):
        with open(args.hyper, encoding="utf-8") as handle:
            return HyperParams.from_dict(json.load(handle))
    return HyperParams()


# ---------------------------------------------------------------- build-tensor


def cmd_build_tensor(args) -> dict:
    started = dt.datetime.now(dt.timezone.utc)
    window = (args.window_start, args.window_end)
    records, errors = load_articles(args.input, window)
    if errors and args.strict:
        raise ValidationError(f"{len(errors)} malformed record(s); first: {errors[0].message}")
    articles = filter_and_dedupe(records, args.keyword)
    aliases = AliasTable.from_tsv(args.aliases) if args.aliases else AliasTable.default()
    lexicon = SurnameLexicon.from_file(args.lexicon) if args.lexicon else SurnameLexicon.default()
    n_weeks = assign_week(args.window_end, args.window_start).t

    def week_of(d):
        return assign_week(d, args.window_start).t

    table = mention_table(articles, aliases, week_of, n_weeks, unit=args.mention_unit)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        figures = select_key_figures(table, args.min_mentions, args.min_week_frac)
    if len(figures) == 0:
        raise ValidationError("no key figures selected; check the corpus, keyword and thresholds")
    mentions = [(a.id, a.date, extract_mentions(a, lexicon, aliases)) for a in articles]
    full = tensor_from_mentions(mentions, figures, args.window_start, n_weeks)

    requested = _name_list(args.drop)
    dropped = [n for n in requested if n in full.figures]
    absent = [n for n in requested if n not in full.figures]
    if absent:
        logger.warning("not dropping names that are not key figures: %s", ", ".join(absent))
    tensor = drop_figures(full, dropped)
    if tensor.N == 0:
        raise ValidationError("every key figure was dropped")

    out = prepare_output_dir(args.out, args.overwrite)
    save_tensor(out, tensor, extra_meta={
        "epoch_start": args.window_start.isoformat(),
        "articles_per_week": [int(sum(1 for a in articles if week_of(a.date) == w.t)) for w in full.weeks],
    })
    # Centralities describe the full key-figure set, before dropping.
    write_centrality_csv(out / "degree_centrality.csv", degree_centrality(full), full.figures, full.weeks)
    write_centrality_csv(out / "betweenness_centrality.csv", betweenness_centrality(full), full.figures, full.weeks)
    with open(out / "key_figures.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["figure", "mentions", "weeks_present", "dropped"])
        for name in full.figures:
            writer.writerow([name, int(table[name].sum()), int((table[name] > 0).sum()), int(name in dropped)])
    if errors:
        with open(out / "record_errors.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["line", "message"])
            for err in errors:
                writer.writerow([err.line, err.message])
    summary = {
        "n_records": len(records), "n_rejected": len(errors), "n_articles": len(articles),
        "N_selected": len(full.figures), "N": tensor.N, "T": tensor.T,
        "dropped": dropped, "drop_absent": absent,
    }
    write_manifest(out, args, started, {"summary": summary})
    logger.info("tensor N=%d T=%d written to %s", tensor.N, tensor.T, out)
    return summary


# ---------------------------------------------------------------- synth


def cmd_synth(args) -> dict:
    started = dt.datetime.now(dt.timezone.utc)
    spec = SynthSpec(N=args.n, T=args.t, R=args.blocks, breakpoints=tuple(_int_list(args.breaks_at)),
                     within=args.within, between=args.between, noise_sd=args.noise_sd, seed=args.seed,
                     mode=args.mode)
    layers, S = generate(spec)
    counts, corrected = to_tensors(spec, layers, args.epoch)
    out = prepare_output_dir(args.out, args.overwrite)
    save_tensor(out, counts, corrected, extra_meta={"epoch_start": args.epoch.isoformat()})
    with open(out / "truth.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["week", "regime"])
        for t, s in enumerate(S, start=1):
            writer.writerow([t, int(s) + 1])
    labels = spec.block_labels()
    with open(out / "blocks.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["figure"] + [f"regime_{m + 1}" for m in range(spec.n_regimes)])
        for i, name in enumerate(corrected.figures):
            writer.writerow([name] + [int(labels[m, i]) for m in range(spec.n_regimes)])
    write_manifest(out, args, started)
    return {"N": spec.N, "T": spec.T, "breakpoints": list(spec.breakpoints)}


# ---------------------------------------------------------------- fit


def _copy_tensor(src: Path, dst: Path) -> None:
    dst.mkdir(parents=True, exist_ok=True)
    for f in sorted(src.iterdir()):
        if f.name == "meta.json" or (f.suffix == ".csv" and f.name[:2] in ("Y_", "B_")):
            shutil.copyfile(f, dst / f.name)


def _regime_runs(regimes: np.ndarray) -> list[tuple[int, int, int]]:
    """Contiguous runs ``(regime, first, last)`` over 0-based positions."""
    runs, start = [], 0
    for t in range(1, len(regimes) + 1):
        if t == len(regimes) or regimes[t] != regimes[start]:
            runs.append((int(regimes[start]), start, t - 1))
            start = t
    return runs


def write_fit_outputs(out: Path, fit, weeks) -> None:
    M = fit.M
    with open(out / "state_probs.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["week", "start_date", "end_date"] + [f"regime_{m + 1}" for m in range(M)])
        for w, row in zip(weeks, fit.state_probs):
            writer.writerow([w.t, w.start_date.isoformat(), w.end_date.isoformat()] + [repr(float(p)) for p in row])
    modal = fit.modal_regimes()
    with open(out / "regimes.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["week", "start_date", "end_date", "regime", "probability"])
        for k, w in enumerate(weeks):
            writer.writerow([w.t, w.start_date.isoformat(), w.end_date.isoformat(), int(modal[k]) + 1,
                             repr(float(fit.state_probs[k, modal[k]]))])
    with open(out / "regime_spans.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["regime", "first_week", "last_week", "start_date", "end_date"])
        for m, a, b in _regime_runs(modal):
            writer.writerow([m + 1, weeks[a].t, weeks[b].t, weeks[a].start_date.isoformat(),
                             weeks[b].end_date.isoformat()])
    with open(out / "loglik.csv", "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["draw", "loglik"])
        for g, v in enumerate(fit.loglik):
            writer.writerow([g, repr(float(v))])


def fit_tensor_dir(tensor_dir, out, config: ModelConfig, hyper: HyperParams, layout: str = "jsonl"):
    """Fit one model to a tensor directory and write the fit directory."""
    tensor_dir, out = Path(tensor_dir), Path(out)
    _, corrected = load_tensor(tensor_dir)
    fit = run_chain(config, hyper, corrected)
    _copy_tensor(tensor_dir, out / "tensor")
    save_fit(out, fit, layout)
    write_fit_outputs(out, fit, corrected.weeks)
    return fit


def _config(args, k: int | None = None) -> ModelConfig:
    return ModelConfig(n_breaks=args.breaks if k is None else k, latent_dim=args.dims, iterations=args.iters,
                       burnin=args.burnin, thin=args.thin, seed=args.seed)


def cmd_fit(args) -> dict:
    started = dt.datetime.now(dt.timezone.utc)
    read_meta(args.input)
    config = _config(args)
    hyper = _hyper(args)
    out = prepare_output_dir(args.out, args.overwrite)
    fit = fit_tensor_dir(args.input, out, config, hyper, args.draw_layout)
    spans = [[m + 1, a + 1, b + 1] for m, a, b in _regime_runs(fit.modal_regimes())]
    write_manifest(out, args, started, {"config": config.to_dict(), "hyper": hyper.to_dict(),
                                        "summary": {"regime_spans": spans}})
    return {"regime_spans": spans}


# ---------------------------------------------------------------- select


def _fit_worker(payload):
    tensor_dir, out, config, hyper, layout = payload
    fit_tensor_dir(tensor_dir, out, ModelConfig.from_dict(config), HyperParams.from_dict(hyper), layout)
    return config["n_breaks"]


def cmd_select(args) -> dict:
    started = dt.datetime.now(dt.timezone.utc)
    src = Path(args.input)
    ks = list(range(args.kmax + 1))
    if len(ks) < 3:
        raise ValidationError("select needs fits for at least three break counts (--kmax >= 2)")
    out = prepare_output_dir(args.out, args.overwrite)
    hyper = _hyper(args)
    if (src / "meta.json").exists():
        # A tensor directory: fit every k here, optionally in parallel.
        payloads = [(str(src), str(out / f"k{k}"), _config(args, k).to_dict(), hyper.to_dict(), args.draw_layout)
                    for k in ks]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                list(pool.map(_fit_worker, payloads))
        else:
            for p in payloads:
                _fit_worker(p)
        fit_root = out
    else:
        fit_root = src
    missing = [k for k in ks if not (fit_root / f"k{k}" / "fit.json").exists()]
    if missing:
        raise ValidationError(f"missing fits for k = {', '.join(map(str, missing))} under {fit_root}")
    scores = []
    for k in ks:
        fit = load_fit(fit_root / f"k{k}")
        if fit.config.n_breaks != k:
            raise ValidationError(f"{fit_root / f'k{k}'} holds a fit with {fit.config.n_breaks} breaks")
        _, corrected = load_tensor(fit_root / f"k{k}" / "tensor")
        scores.append(score_fit(fit, corrected, hyper=fit.hyper, n_reduced=args.reduced_runs, seed=args.seed))
        logger.info("k=%d scored", k)
    write_scores_csv(out / "scores.csv", scores)
    report = selection_report(scores)
    if report["no_kink_warning"]:
        logger.warning("no kink in the log marginal likelihoods")
    _write_json(out / "selection.json", report)
    write_manifest(out, args, started, {"summary": {"selected_k": report["selected_k"],
                                                    "kink_candidates": report["kink_candidates"]}})
    return report


# ---------------------------------------------------------------- report


def cmd_report(args) -> dict:
    started = dt.datetime.now(dt.timezone.utc)
    src = Path(args.input)
    fit = load_fit(src)
    counts, corrected = load_tensor(src / "tensor")
    out = prepare_output_dir(args.out, args.overwrite)
    modal = fit.modal_regimes()
    weights = counts.Y if counts is not None else corrected.B
    names = corrected.figures.names
    N = len(names)
    iu = np.triu_indices(N, k=1)
    for m in range(fit.M):
        total = weights[modal == m].sum(axis=0)
        with open(out / f"edges_regime_{m + 1}.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["source", "target", "weight"])
            for i, j in zip(*iu):
                w = total[i, j]
                if w != 0:
                    writer.writerow([names[i], names[j], int(w) if counts is not None else repr(float(w))])
    U = fit.posterior_U
    for m in range(fit.M):
        with open(out / f"latent_regime_{m + 1}.csv", "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["figure"] + [f"dim_{r + 1}" for r in range(U.shape[2])])
            for i, name in enumerate(names):
                writer.writerow([name] + [repr(float(x)) for x in U[m, i]])
    if counts is not None:
        write_centrality_csv(out / "degree_centrality.csv", degree_centrality(counts), counts.figures, counts.weeks)
        write_centrality_csv(out / "betweenness_centrality.csv", betweenness_centrality(counts), counts.figures,
                             counts.weeks)
    shutil.copyfile(src / "state_probs.csv", out / "state_probs.csv")
    write_manifest(out, args, started, {"edge_weight_source": "Y" if counts is not None else "B"})
    return {"regimes": fit.M}


# ---------------------------------------------------------------- rerun


def cmd_rerun(args) -> dict:
    with open(args.manifest, encoding="utf-8") as handle:
        manifest = json.load(handle)
    if manifest.get("tool") != "kfnet" or manifest.get("command") not in COMMANDS:
        raise ValidationError(f"{args.manifest} is not a kfnet manifest")
    saved = dict(manifest["args"])
    if args.out is not None:
        saved["out"] = str(Path(args.out).resolve())
    saved["overwrite"] = True
    for key in _DATE_ARGS:
        if isinstance(saved.get(key), str):
            saved[key] = dt.date.fromisoformat(saved[key])
    ns = argparse.Namespace(**saved)
    ns.func = COMMANDS[ns.command]
    return ns.func(ns)


COMMANDS = {
    "build-tensor": cmd_build_tensor, "synth": cmd_synth, "fit": cmd_fit,
    "select": cmd_select, "report": cmd_report, "rerun": cmd_rerun,
}


def _add_model_args(p, breaks=True):
    if breaks:
        p.add_argument("--breaks", type=int, default=0, help="number of breaks k (regimes = k + 1)")
    p.add_argument("--dims", type=int, default=2, help="latent dimension R")
    p.add_argument("--iters", type=int, default=2000, help="total sweeps including burn-in")
    p.add_argument("--burnin", type=int, default=1000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hyper", default=None, help="JSON file overriding prior hyperparameters")
    p.add_argument("--draw-layout", choices=("jsonl", "per-draw"), default="jsonl")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kfnet", description="Key-figure co-occurrence networks and HMTM regime analysis.")
    parser.add_argument("--version", action="version", version=f"kfnet {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-tensor", parents=[common], help="build a weekly co-occurrence tensor from articles")
    p.add_argument("--input", required=True, help="articles as JSON Lines (id, source, date, text)")
    p.add_argument("--out", required=True)
    p.add_argument("--aliases", default=None, help="alias TSV (canonical, variant); bundled table if omitted")
    p.add_argument("--lexicon", default=None, help="surname list; bundled list if omitted")
    p.add_argument("--window-start", type=_date, default=dt.date(2018, 1, 1))
    p.add_argument("--window-end", type=_date, default=dt.date(2018, 6, 16))
    p.add_argument("--keyword", default="Korea")
    p.add_argument("--min-mentions", type=int, default=10)
    p.add_argument("--min-week-frac", type=float, default=0.25)
    p.add_argument("--mention-unit", choices=("occurrences", "articles"), default="occurrences")
    p.add_argument("--drop", default=DEFAULT_DROP, help="comma-separated figures to remove; '' keeps all")
    p.add_argument("--strict", action="store_true", help="fail on malformed records instead of reporting them")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_build_tensor)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic tensor with planted breaks")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--t", type=int, default=24)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--breaks-at", default="13", help="comma-separated 1-based weeks starting new regimes")
    p.add_argument("--within", type=float, default=3.0)
    p.add_argument("--between", type=float, default=0.0)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--mode", choices=("real", "counts"), default="real")
    p.add_argument("--epoch", type=_date, default=dt.date(2018, 1, 1))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", parents=[common], help="fit the hidden Markov tensor model")
    p.add_argument("--input", required=True, help="tensor directory")
    p.add_argument("--out", required=True)
    _add_model_args(p)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", parents=[common], help="score fits for k = 0..kmax and pick the break number")
    p.add_argument("--input", required=True, help="tensor directory (fits are run) or directory of k<k> fits")
    p.add_argument("--out", required=True)
    p.add_argument("--kmax", type=int, default=4)
    _add_model_args(p, breaks=False)
    p.add_argument("--reduced-runs", type=int, default=1000, help="reduced Gibbs iterations per ordinate block")
    p.add_argument("--jobs", type=int, default=1, help="parallel fits when --input is a tensor directory")
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("report", parents=[common], help="export regime edge lists, latent positions and centralities")
    p.add_argument("--input", required=True, help="fit directory")
    p.add_argument("--out", required=True)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("rerun", parents=[common], help="replay a command from its manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="write to this directory instead of the recorded one")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"kfnet {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ValueError, KeyError) as exc:
        print(f"kfnet {args.command}: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"kfnet {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
