"""Article ingestion, person-name matching and key-figure selection."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("id", "source", "date", "text")


def toy_corpus_path() -> Path:
    """Path of the bundled 50-record demonstration corpus."""
    return Path(str(resources.files("kfnet.data") / "toy_corpus.jsonl"))


@dataclass(frozen=True)
class ArticleRecord:
    id: str
    source: str
    date: dt.date
    text: str


@dataclass(frozen=True)
class RecordError:
    """A rejected input line (1-based line number)."""

    line: int
    message: str


def normalize_text(text: str) -> str:
    """Lower-case and collapse runs of whitespace to single spaces."""
    return " ".join(text.lower().split())


def _parse_record(obj, line_no: int) -> ArticleRecord:
    if not isinstance(obj, dict):
        raise ValidationError(f"line {line_no}: expected a JSON object")
    missing = [k for k in REQUIRED_FIELDS if obj.get(k) in (None, "")]
    if missing:
        raise ValidationError(f"line {line_no}: missing required field(s) {', '.join(missing)}")
    try:
        date = dt.date.fromisoformat(str(obj["date"]))
    except ValueError:
        raise ValidationError(f"line {line_no}: bad date {obj['date']!r}") from None
    text = str(obj["text"])
    if not text.strip():
        raise ValidationError(f"line {line_no}: empty text")
    return ArticleRecord(id=str(obj["id"]), source=str(obj["source"]), date=date, text=text)


def load_articles(
    path: str | Path, window: tuple[dt.date, dt.date]
) -> tuple[list[ArticleRecord], list[RecordError]]:
    """Read a JSON Lines article file.

    Returns the records dated inside ``window`` (inclusive on both ends) in
    file order, together with one ``RecordError`` per rejected line. Lines
    that fail validation are never dropped silently. An unreadable file
    raises ``OSError``.
    """
    start, end = window
    if start > end:
        raise ValidationError(f"empty window {start} .. {end}")
    records: list[ArticleRecord] = []
    errors: list[RecordError] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                errors.append(RecordError(line_no, f"line {line_no}: invalid JSON ({exc.msg})"))
                continue
            try:
                rec = _parse_record(obj, line_no)
            except ValidationError as exc:
                errors.append(RecordError(line_no, str(exc)))
                continue
            if rec.id in seen:
                errors.append(RecordError(line_no, f"line {line_no}: duplicate id {rec.id!r}"))
                continue
            seen.add(rec.id)
            if start <= rec.date <= end:
                records.append(rec)
    if errors:
        logger.warning("%s: %d malformed record(s)", path, len(errors))
    return records, errors


def filter_and_dedupe(articles: Sequence[ArticleRecord], keyword: str = "Korea") -> list[ArticleRecord]:
    """Keep keyword-bearing articles, dropping reposts of identical text.

    Among articles whose normalized text is identical only the earliest-dated
    one survives (file order breaks date ties). Output keeps input order.
    """
    if not keyword:
        raise ValidationError("keyword must be non-empty")
    needle = keyword.casefold()
    earliest: dict[str, int] = {}
    candidates = [a for a in articles if needle in a.text.casefold()]
    for pos, art in enumerate(candidates):
        key = normalize_text(art.text)
        best = earliest.get(key)
        if best is None or art.date < candidates[best].date:
            earliest[key] = pos
    keep = set(earliest.values())
    return [a for pos, a in enumerate(candidates) if pos in keep]


class AliasTable:
    """Canonical person names and their spelling variants.

    Variants are matched after :func:`normalize_text`, so the table is
    case-insensitive. Every canonical name is also one of its own variants,
    and no variant may belong to two canonical names.
    """

    def __init__(self, entries: Mapping[str, Iterable[str]]):
        owner: dict[str, str] = {}
        table: dict[str, frozenset[str]] = {}
        for canonical, variants in entries.items():
            if not canonical.strip():
                raise ValidationError("empty canonical name in alias table")
            normed = {normalize_text(canonical)}
            for v in variants:
                if not v or not v.strip():
                    raise ValidationError(f"empty variant for {canonical!r}")
                normed.add(normalize_text(v))
            for v in normed:
                other = owner.get(v)
                if other is not None and other != canonical:
                    raise ValidationError(
                        f"variant {v!r} claimed by both {other!r} and {canonical!r}"
                    )
                owner[v] = canonical
            table[canonical] = frozenset(normed)
        self.entries: dict[str, frozenset[str]] = table
        self._owner = owner
        # Longest variants first so "kim jong un" wins over a shorter overlapping variant.
        ordered = sorted(owner, key=lambda v: (-len(v), v))
        if ordered:
            alternation = "|".join(re.escape(v) for v in ordered)
            self._pattern = re.compile(rf"(?<!\w)(?:{alternation})(?!\w)")
        else:
            self._pattern = None

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def canonical_of(self, variant: str) -> str | None:
        return self._owner.get(normalize_text(variant))

    def finditer(self, text: str):
        """Yield ``(canonical, matched_variant)`` for each non-overlapping match."""
        if self._pattern is None:
            return
        for m in self._pattern.finditer(normalize_text(text)):
            yield self._owner[m.group(0)], m.group(0)

    @classmethod
    def from_tsv(cls, path: str | Path) -> "AliasTable":
        entries: dict[str, set[str]] = {}
        with open(path, encoding="utf-8", newline="") as handle:
            rows = (line for line in handle if line.strip() and not line.lstrip().startswith("#"))
            for row_no, row in enumerate(csv.reader(rows, delimiter="\t"), start=1):
                if len(row) < 2:
                    raise ValidationError(f"{path}: alias row {row_no} needs canonical<TAB>variant")
                canonical, variant = row[0].strip(), row[1].strip()
                if canonical.lower() == "canonical" and variant.lower() == "variant":
                    continue
                entries.setdefault(canonical, set()).add(variant)
        return cls(entries)

    @classmethod
    def default(cls) -> "AliasTable":
        with resources.as_file(resources.files("kfnet.data") / "aliases.tsv") as p:
            return cls.from_tsv(p)


@dataclass(frozen=True)
class SurnameLexicon:
    surnames: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "surnames", frozenset(s.strip().lower() for s in self.surnames if s.strip()))

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.surnames

    @classmethod
    def from_file(cls, path: str | Path) -> "SurnameLexicon":
        with open(path, encoding="utf-8") as handle:
            return cls(frozenset(line for line in handle if not line.startswith("#")))

    @classmethod
    def default(cls) -> "SurnameLexicon":
        with resources.as_file(resources.files("kfnet.data") / "surnames.txt") as p:
            return cls.from_file(p)


_CAPITALIZED_RUN = re.compile(r"\b[A-Z][\w'.-]*(?:\s+[A-Z][\w'.-]*){1,3}")


def candidate_names(text: str, lexicon: SurnameLexicon) -> set[str]:
    """Capitalised 2-4 token runs whose first or last token is a known surname.

    Korean names put the surname first, Western names last; both are checked.
    This is a discovery aid for curating alias tables, not a matcher.
    """
    found = set()
    for m in _CAPITALIZED_RUN.finditer(text):
        tokens = [tok.rstrip(".,;:'") or tok for tok in m.group(0).split()]
        edges = {tokens[0].strip(".,'").split("-")[0], tokens[-1].strip(".,'").split("-")[0]}
        if any(e in lexicon for e in edges):
            found.add(" ".join(tokens))
    return found


def extract_mentions(
    article: ArticleRecord | str,
    lexicon: SurnameLexicon | None,
    aliases: AliasTable,
    include_unaliased: bool = False,
) -> frozenset[str]:
    """Canonical names mentioned at least once in an article.

    Matching is exact over alias variants at token boundaries. With
    ``include_unaliased`` the surname lexicon additionally contributes
    capitalised name runs that no alias covers, keyed by their surface form.
    """
    text = article.text if isinstance(article, ArticleRecord) else article
    names = {canonical for canonical, _ in aliases.finditer(text)}
    if include_unaliased and lexicon is not None:
        for cand in candidate_names(text, lexicon):
            if aliases.canonical_of(cand) is None:
                names.add(cand)
    return frozenset(names)


def count_mentions(article: ArticleRecord | str, aliases: AliasTable) -> Counter:
    """Occurrence counts per canonical name (every matched variant counts)."""
    text = article.text if isinstance(article, ArticleRecord) else article
    return Counter(canonical for canonical, _ in aliases.finditer(text))


def mention_table(
    articles: Sequence[ArticleRecord],
    aliases: AliasTable,
    week_of: Callable[[dt.date], int],
    n_weeks: int,
    unit: str = "occurrences",
) -> dict[str, np.ndarray]:
    """Per-week mention counts for every canonical name that appears.

    ``unit="occurrences"`` counts every variant hit; ``unit="articles"``
    counts each article at most once per name. ``week_of`` maps a date to a
    1-based week number.
    """
    if unit not in ("occurrences", "articles"):
        raise ValidationError(f"unknown mention unit {unit!r}")
    table: dict[str, np.ndarray] = {}
    for art in articles:
        week = week_of(art.date)
        if not 1 <= week <= n_weeks:
            continue
        counts = count_mentions(art, aliases)
        for name, c in counts.items():
            row = table.setdefault(name, np.zeros(n_weeks, dtype=np.int64))
            row[week - 1] += c if unit == "occurrences" else 1
    return table


@dataclass(frozen=True)
class KeyFigureSet:
    names: tuple[str, ...]
    index: dict[str, int] = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        names = tuple(self.names)
        if len(set(names)) != len(names):
            raise ValidationError("duplicate key figure names")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "index", {n: i for i, n in enumerate(names)})

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self.index

    @classmethod
    def from_counts(cls, totals: Mapping[str, int]) -> "KeyFigureSet":
        """Order by descending total count, ties broken lexicographically."""
        return cls(tuple(sorted(totals, key=lambda n: (-totals[n], n))))


def select_key_figures(
    table: Mapping[str, Sequence[int]],
    min_mentions: int = 10,
    min_week_fraction: float = 0.25,
) -> KeyFigureSet:
    """Names passing both the volume and the week-consistency threshold.

    A name qualifies with at least ``min_mentions`` in total and a non-zero
    count in at least ``ceil(min_week_fraction * T)`` distinct weeks.
    """
    if min_mentions < 1:
        raise ValidationError("min_mentions must be >= 1")
    if not 0 < min_week_fraction <= 1:
        raise ValidationError("min_week_fraction must lie in (0, 1]")
    lengths = {len(v) for v in table.values()}
    if len(lengths) > 1:
        raise ValidationError(f"inconsistent week counts in mention table: {sorted(lengths)}")
    totals = {}
    if lengths:
        n_weeks = lengths.pop()
        # Tolerance keeps e.g. 0.25 * 24 from rounding up to 7.
        need_weeks = math.ceil(min_week_fraction * n_weeks - 1e-9)
        for name, counts in table.items():
            counts = np.asarray(counts)
            total = int(counts.sum())
            if total >= min_mentions and int(np.count_nonzero(counts)) >= need_weeks:
                totals[name] = total
    figures = KeyFigureSet.from_counts(totals)
    if not figures.names:
        warnings.warn("no names passed the key-figure thresholds", RuntimeWarning, stacklevel=2)
    return figures
