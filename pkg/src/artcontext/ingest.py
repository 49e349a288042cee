"""Dataset ingestion: metadata parsing, label spaces, derived attributes,
and the binary visual-feature store.

The dataset format is UTF-8 delimited text (tab by default) with a header
row.  Seven metadata columns plus a free-text comment are required; ``id``
and ``image_ref`` fall back to the ``image_file`` column when not given
explicitly, which matches how art collection exports are usually shipped.
"""

from __future__ import annotations

import csv
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from . import binio
from .errors import DatasetError, DimensionMismatchError, SchemaError

UNKNOWN_CLASS = "Unknown"

LABEL_FAMILIES = ("type", "school", "timeframe", "author")

# Accepted header spellings per logical field, in priority order.
_COLUMN_ALIASES = {
    "id": ("id", "image_file"),
    "image_ref": ("image_ref", "image_file", "id"),
    "author": ("author",),
    "title": ("title",),
    "date": ("date",),
    "technique": ("technique",),
    "type": ("type",),
    "school": ("school",),
    "timeframe": ("timeframe",),
    "comment": ("comment", "description"),
}

_REQUIRED_FIELDS = ("id", "author", "title", "date", "technique", "type", "school", "timeframe", "comment")


@dataclass(frozen=True)
class PaintingRecord:
    """One artwork's metadata row."""

    id: str
    image_ref: str
    author: str
    title: str
    date: str
    technique: str
    type: str
    school: str
    timeframe: str
    comment: str


@dataclass
class DatasetSplit:
    name: str
    records: list[PaintingRecord]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


@dataclass
class LabelSpace:
    """Ordered class list for one attribute family.

    Classes are attribute values that met the training-count threshold,
    ordered by descending count then lexicographically so indices are
    stable across runs.  ``unknown_index`` is set when at least one value
    fell below the threshold; records carrying such values map there.
    """

    family: str
    classes: list[str]
    unknown_index: int | None = None

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ValueError(f"duplicate classes in label space for {self.family}")
        if self.unknown_index is not None and not (0 <= self.unknown_index < len(self.classes)):
            raise ValueError(f"unknown_index {self.unknown_index} out of range")

    def __len__(self) -> int:
        return len(self.classes)

    def index_of(self, value: str) -> int:
        key = _normalize_key(value)
        idx = self._lookup().get(key)
        if idx is not None:
            return idx
        if self.unknown_index is not None:
            return self.unknown_index
        raise KeyError(f"value {value!r} not in label space for {self.family} and no Unknown class")

    def label_for_record(self, record: PaintingRecord) -> int:
        return self.index_of(getattr(record, self.family))

    def _lookup(self) -> dict[str, int]:
        cached = getattr(self, "_index_cache", None)
        if cached is None:
            cached = {_normalize_key(c): i for i, c in enumerate(self.classes)}
            object.__setattr__(self, "_index_cache", cached)
        return cached


@dataclass
class FeatureStore:
    """Precomputed visual vectors, one per painting id, all of one dim.

    Vectors are kept as float32, mirroring the on-disk format, so a
    write/read round trip is bit-exact.  Training code widens to float64.
    """

    dim: int
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for key, vec in self.entries.items():
            self.entries[key] = self._check(key, vec)

    def _check(self, key: str, vec) -> np.ndarray:
        arr = np.asarray(vec, dtype=np.float32)
        if arr.ndim != 1 or arr.shape[0] != self.dim:
            raise DimensionMismatchError(f"feature {key!r} has shape {arr.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"feature {key!r} contains non-finite values")
        return arr

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __getitem__(self, key: str) -> np.ndarray:
        return self.entries[key]

    def matrix_for(self, ids: Sequence[str]) -> np.ndarray:
        """Stack vectors for ``ids`` into an (n, dim) float64 matrix."""
        missing = [i for i in ids if i not in self.entries]
        if missing:
            raise KeyError(f"ids missing from feature store: {missing[:5]}")
        return np.stack([self.entries[i] for i in ids]).astype(np.float64)


@dataclass(frozen=True)
class DerivedAttributes:
    """Per-painting attributes computed from free-form metadata fields."""

    material: str | None
    support: str | None
    keywords: tuple[str, ...]


def _normalize_key(value: str) -> str:
    return " ".join(value.split()).casefold()


def load_dataset(path: str, split: str, delimiter: str = "\t") -> DatasetSplit:
    """Read a delimited metadata file into a DatasetSplit, preserving row order."""
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("id") from None
        lower = [h.strip().lower() for h in header]
        columns: dict[str, int] = {}
        for logical, aliases in _COLUMN_ALIASES.items():
            for alias in aliases:
                if alias in lower:
                    columns[logical] = lower.index(alias)
                    break
        for logical in _REQUIRED_FIELDS:
            if logical not in columns:
                raise SchemaError(logical)

        records: list[PaintingRecord] = []
        seen: set[str] = set()
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue

            def cell(logical: str) -> str:
                idx = columns.get(logical)
                if idx is None or idx >= len(row):
                    return ""
                return row[idx].strip()

            rec = PaintingRecord(
                id=cell("id"),
                image_ref=cell("image_ref") or cell("id"),
                author=cell("author"),
                title=cell("title"),
                date=cell("date"),
                technique=cell("technique"),
                type=cell("type"),
                school=cell("school"),
                timeframe=cell("timeframe"),
                comment=cell("comment"),
            )
            if rec.id in seen:
                raise DatasetError(f"duplicate painting id {rec.id!r} in {path}")
            seen.add(rec.id)
            records.append(rec)
    return DatasetSplit(name=split, records=records)


def build_label_space(records: Sequence[PaintingRecord], family: str, min_count: int) -> LabelSpace:
    """Build the ordered class list for one attribute family.

    Values are case-folded and whitespace-normalized before counting.  A
    value joins the class list when it occurs at least ``min_count`` times;
    the display form is the most frequent raw spelling.  Empty values never
    become classes.  When anything was filtered (or any record had an empty
    value), an Unknown class is appended and absorbs those records.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if not records:
        raise DatasetError(f"cannot build a label space for {family} from zero records")
    if family not in LABEL_FAMILIES:
        raise ValueError(f"unknown label family {family!r}, expected one of {LABEL_FAMILIES}")

    counts: Counter[str] = Counter()
    spellings: dict[str, Counter[str]] = {}
    n_empty = 0
    for rec in records:
        raw = getattr(rec, family)
        key = _normalize_key(raw)
        if not key:
            n_empty += 1
            continue
        counts[key] += 1
        spellings.setdefault(key, Counter())[raw.strip()] += 1

    kept = [(key, n) for key, n in counts.items() if n >= min_count]
    kept.sort(key=lambda kn: (-kn[1], kn[0]))
    classes = [spellings[key].most_common(1)[0][0] for key, _ in kept]

    filtered_out = (len(kept) < len(counts)) or n_empty > 0
    unknown_index = None
    if filtered_out:
        classes.append(UNKNOWN_CLASS)
        unknown_index = len(classes) - 1
    return LabelSpace(family=family, classes=classes, unknown_index=unknown_index)


_DIMENSION_RE = re.compile(
    r"(\d+(?:[.,]\d+)?)\s*[x×]\s*(\d+(?:[.,]\d+)?)\s*(cm|mm|m)?\b",
    re.IGNORECASE,
)


def parse_technique(technique: str) -> tuple[str | None, str | None]:
    """Split a free-form technique string into (material, support).

    Material is the lowercased text preceding the first dimension
    expression or comma; support is the whitespace-normalized dimension
    expression (``number x number [unit]``).  Unparseable parts come back
    as None.
    """
    text = technique.strip()
    if not text:
        return None, None

    match = _DIMENSION_RE.search(text)
    support = None
    cut = len(text)
    if match:
        support = f"{match.group(1)}x{match.group(2)}{(match.group(3) or '').lower()}"
        cut = match.start()
    comma = text.find(",")
    if comma != -1:
        cut = min(cut, comma)

    material = text[:cut].strip().strip(",").strip().lower() or None
    return material, support


def default_stopwords() -> frozenset[str]:
    """English stop words shipped with the package."""
    text = resources.files("artcontext.data").joinpath("stopwords_en.txt").read_text("utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip())


_TOKEN_RE = re.compile(r"[a-z]+")


def tokenize_title(title: str) -> list[str]:
    """Lowercase a title and strip punctuation, returning word tokens."""
    return _TOKEN_RE.findall(title.lower())


def extract_title_keywords(
    titles: Iterable[str],
    n_max: int,
    min_freq: int,
    stopwords: frozenset[str] | None = None,
) -> dict[str, int]:
    """Count word n-grams (1..n_max) across titles and keep the frequent ones.

    N-grams made exclusively of stop words are dropped; mixed n-grams
    survive.  Returns ``ngram -> corpus count`` for counts >= min_freq.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if stopwords is None:
        stopwords = default_stopwords()

    counts: Counter[str] = Counter()
    for title in titles:
        tokens = tokenize_title(title)
        for n in range(1, n_max + 1):
            for i in range(len(tokens) - n + 1):
                gram = tokens[i : i + n]
                if all(tok in stopwords for tok in gram):
                    continue
                counts[" ".join(gram)] += 1
    return {gram: c for gram, c in counts.items() if c >= min_freq}


def keywords_in_title(title: str, keywords: set[str] | dict[str, int], n_max: int) -> tuple[str, ...]:
    """Which corpus keywords occur in this one title (sorted for determinism)."""
    tokens = tokenize_title(title)
    found: set[str] = set()
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - n + 1):
            gram = " ".join(tokens[i : i + n])
            if gram in keywords:
                found.add(gram)
    return tuple(sorted(found))


def derive_attributes(
    records: Sequence[PaintingRecord],
    keywords: set[str] | dict[str, int],
    n_max: int = 3,
) -> dict[str, DerivedAttributes]:
    """Material/support/keyword attributes for each record, keyed by id."""
    out: dict[str, DerivedAttributes] = {}
    for rec in records:
        material, support = parse_technique(rec.technique)
        out[rec.id] = DerivedAttributes(
            material=material,
            support=support,
            keywords=keywords_in_title(rec.title, keywords, n_max),
        )
    return out


def write_features(store: FeatureStore, path: str) -> None:
    """Serialize a FeatureStore (sorted by id for reproducible bytes)."""
    items = sorted(store.entries.items())
    binio.write_vector_table(path, binio.FEATURE_MAGIC, items, store.dim)


def read_features(path: str) -> FeatureStore:
    dim, entries = binio.read_vector_table(path, binio.FEATURE_MAGIC)
    return FeatureStore(dim=dim, entries=entries)
