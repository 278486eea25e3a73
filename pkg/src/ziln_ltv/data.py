"""Feature schema, CSV ingestion, transaction featurization and splitting."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

OOV_TOKEN = "<OOV>"
FIXED_COLUMNS = ("id", "label", "first_purchase_value")
TRANSACTION_COLUMNS = ("customer_id", "date", "amount", "chain", "category", "brand", "size_measure")
TRANSACTION_CATEGORICALS = ("chain", "category", "brand", "size_measure")
TRANSACTION_NUMERICS = ("initial_amount", "item_count")


class DataError(ValueError):
    """Malformed input data. ``line`` is the 1-based line in the source file."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class Vocabulary:
    """Ordered categorical values. Index 0 is always out-of-vocabulary."""

    values: tuple[str, ...]

    def __post_init__(self):
        if not self.values or self.values[0] != OOV_TOKEN:
            raise ValueError("vocabulary must start with the OOV token")
        if len(set(self.values)) != len(self.values):
            raise ValueError("vocabulary values must be unique")

    @classmethod
    def from_values(cls, values: Iterable[str]) -> "Vocabulary":
        return cls((OOV_TOKEN, *values))

    def __len__(self):
        return len(self.values)

    def index(self, value: str) -> int:
        return self._lookup.get(value, 0)

    @property
    def _lookup(self) -> dict[str, int]:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {v: i for i, v in enumerate(self.values) if i > 0}
            object.__setattr__(self, "_cache", cache)
        return cache

    def save(self, path) -> None:
        Path(path).write_text("".join(v + "\n" for v in self.values), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != OOV_TOKEN:
            raise DataError(f"first line must be {OOV_TOKEN!r}", str(path), 1)
        return cls(tuple(lines))


@dataclass(frozen=True)
class FeatureSchema:
    numeric_features: tuple[str, ...]
    categorical_features: tuple[tuple[str, Vocabulary], ...] = ()
    label_name: str = "label"
    first_purchase_value_name: str | None = "first_purchase_value"

    def __post_init__(self):
        names = list(self.numeric_features) + self.categorical_names
        if len(set(names)) != len(names):
            raise ValueError(f"feature names must be unique: {names}")
        if set(names) & set(FIXED_COLUMNS):
            raise ValueError(f"feature names may not reuse reserved columns {FIXED_COLUMNS}")

    @property
    def categorical_names(self) -> list[str]:
        return [name for name, _ in self.categorical_features]

    @property
    def vocab_sizes(self) -> list[int]:
        return [len(v) for _, v in self.categorical_features]

    def vocabulary(self, name: str) -> Vocabulary:
        for n, v in self.categorical_features:
            if n == name:
                return v
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "numeric_features": list(self.numeric_features),
            "categorical_features": [
                {"name": n, "vocabulary": list(v.values[1:])} for n, v in self.categorical_features
            ],
            "label_name": self.label_name,
            "first_purchase_value_name": self.first_purchase_value_name,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "FeatureSchema":
        cats = []
        for entry in d.get("categorical_features", []):
            if "vocabulary_file" in entry:
                path = Path(entry["vocabulary_file"])
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                vocab = Vocabulary.load(path)
            else:
                vocab = Vocabulary.from_values(entry.get("vocabulary", []))
            cats.append((entry["name"], vocab))
        return cls(
            numeric_features=tuple(d.get("numeric_features", [])),
            categorical_features=tuple(cats),
            label_name=d.get("label_name", "label"),
            first_purchase_value_name=d.get("first_purchase_value_name", "first_purchase_value"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"invalid schema JSON: {e.msg}", str(path), e.lineno) from e
        return cls.from_dict(d, base_dir=path.parent)


@dataclass
class LtvExample:
    id: str
    numerics: list[float]
    categoricals: list[int]
    label: float
    first_purchase_value: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.label) and self.label >= 0):
            raise ValueError(f"example {self.id}: label must be finite and >= 0, got {self.label}")


@dataclass(frozen=True)
class TransactionRecord:
    customer_id: str
    date: dt.date
    amount: float
    chain: str = ""
    category: str = ""
    brand: str = ""
    size_measure: str = ""


# ---------------------------------------------------------------------------
# examples CSV


def _parse_float(text: str, column: str, path: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"column {column!r}: cannot parse {text!r} as a number", path, line) from None
    if not math.isfinite(value):
        raise DataError(f"column {column!r}: non-finite value {text!r}", path, line)
    return value


def load_examples(path, schema: FeatureSchema) -> list[LtvExample]:
    """Read an examples CSV; unknown categorical strings map to index 0."""
    path = str(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("missing header row", path, 1) from None
        required = [*FIXED_COLUMNS, *schema.numeric_features, *schema.categorical_names]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataError(f"missing columns {missing}", path, 1)
        col = {name: header.index(name) for name in required}
        vocabs = [v for _, v in schema.categorical_features]

        examples = []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", path, line)
            label = _parse_float(row[col["label"]], "label", path, line)
            if label < 0:
                raise DataError(f"negative label {label}", path, line)
            examples.append(
                LtvExample(
                    id=row[col["id"]],
                    numerics=[_parse_float(row[col[n]], n, path, line) for n in schema.numeric_features],
                    categoricals=[v.index(row[col[n]]) for n, v in zip(schema.categorical_names, vocabs)],
                    label=label,
                    first_purchase_value=_parse_float(
                        row[col["first_purchase_value"]], "first_purchase_value", path, line
                    ),
                )
            )
    return examples


def _fmt(x: float) -> str:
    return repr(float(x))


def save_examples(path, examples: Sequence[LtvExample], schema: FeatureSchema) -> None:
    vocabs = [v for _, v in schema.categorical_features]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*FIXED_COLUMNS, *schema.numeric_features, *schema.categorical_names])
        for ex in examples:
            w.writerow(
                [ex.id, _fmt(ex.label), _fmt(ex.first_purchase_value)]
                + [_fmt(v) for v in ex.numerics]
                + [vocab.values[i] for vocab, i in zip(vocabs, ex.categoricals)]
            )


# ---------------------------------------------------------------------------
# transactions


def load_transactions(path) -> list[TransactionRecord]:
    path = str(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError("missing header row", path, 1)
        missing = [c for c in TRANSACTION_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DataError(f"missing columns {missing}", path, 1)
        records = []
        for row in reader:
            line = reader.line_num
            try:
                date = dt.date.fromisoformat(row["date"])
            except (TypeError, ValueError):
                raise DataError(f"bad date {row['date']!r}, expected YYYY-MM-DD", path, line) from None
            records.append(
                TransactionRecord(
                    customer_id=row["customer_id"],
                    date=date,
                    amount=_parse_float(row["amount"], "amount", path, line),
                    **{c: row[c] for c in TRANSACTION_CATEGORICALS},
                )
            )
    return records


@dataclass
class CustomerSummary:
    """One cohort customer with raw (string) categorical attributes."""

    customer_id: str
    initial_date: dt.date
    initial_amount: float
    item_count: int
    attributes: dict[str, str]
    label: float

    @property
    def numerics(self) -> list[float]:
        return [self.initial_amount, float(self.item_count)]


def summarize_customers(
    records: Sequence[TransactionRecord],
    cohort_start: dt.date,
    cohort_end: dt.date,
    horizon_days: int = 365,
) -> list[CustomerSummary]:
    """Aggregate transactions into one row per cohort customer, sorted by id.

    Features come from the initial purchase date only; the label is the net
    spend on days ``1..horizon_days`` after it, floored at zero.
    """
    if not records:
        raise ValueError("no transaction records")
    if cohort_end <= cohort_start:
        raise ValueError(f"cohort_end {cohort_end} must be after cohort_start {cohort_start}")
    if horizon_days < 1:
        raise ValueError("horizon_days must be >= 1")

    by_customer: dict[str, list[TransactionRecord]] = defaultdict(list)
    for r in records:
        by_customer[r.customer_id].append(r)

    out = []
    for cid in sorted(by_customer):
        txns = by_customer[cid]
        first = min(t.date for t in txns)
        if not (cohort_start <= first < cohort_end):
            continue
        # canonical order so ties in amount resolve independently of input order
        day0 = sorted(
            (t for t in txns if t.date == first),
            key=lambda t: (-t.amount, *(getattr(t, c) for c in TRANSACTION_CATEGORICALS)),
        )
        future = sorted(t.amount for t in txns if 1 <= (t.date - first).days <= horizon_days)
        label = math.fsum(future)
        if label < 0:
            log.info("customer %s: net future spend %.2f floored to 0", cid, label)
            label = 0.0
        out.append(
            CustomerSummary(
                customer_id=cid,
                initial_date=first,
                initial_amount=math.fsum(sorted(t.amount for t in day0)),
                item_count=len(day0),
                attributes={c: getattr(day0[0], c) for c in TRANSACTION_CATEGORICALS},
                label=label + 0.0,
            )
        )
    return out


def build_vocab(values: Iterable[str], min_count: int = 1) -> Vocabulary:
    """Values seen at least ``min_count`` times, most frequent first, ties lexicographic."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter(values)
    counts.pop(OOV_TOKEN, None)
    kept = sorted((v for v, c in counts.items() if c >= min_count), key=lambda v: (-counts[v], v))
    return Vocabulary.from_values(kept)


def transaction_schema(summaries: Sequence[CustomerSummary], min_count: int = 1) -> FeatureSchema:
    return FeatureSchema(
        numeric_features=TRANSACTION_NUMERICS,
        categorical_features=tuple(
            (c, build_vocab((s.attributes[c] for s in summaries), min_count))
            for c in TRANSACTION_CATEGORICALS
        ),
    )


def summaries_to_examples(summaries: Sequence[CustomerSummary], schema: FeatureSchema) -> list[LtvExample]:
    return [
        LtvExample(
            id=s.customer_id,
            numerics=s.numerics,
            categoricals=[schema.vocabulary(c).index(s.attributes[c]) for c in schema.categorical_names],
            label=s.label,
            first_purchase_value=max(s.initial_amount, 0.0),
        )
        for s in summaries
    ]


def featurize_transactions(
    records: Sequence[TransactionRecord],
    cohort_start: dt.date,
    cohort_end: dt.date,
    horizon_days: int = 365,
    schema: FeatureSchema | None = None,
) -> list[LtvExample]:
    """Turn a transaction log into labelled examples.

    Without an explicit ``schema`` the categorical vocabularies are built
    from the cohort itself (``min_count=1``).
    """
    summaries = summarize_customers(records, cohort_start, cohort_end, horizon_days)
    if schema is None:
        schema = transaction_schema(summaries)
    return summaries_to_examples(summaries, schema)


def write_summaries_csv(path, summaries: Sequence[CustomerSummary]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*FIXED_COLUMNS, *TRANSACTION_NUMERICS, *TRANSACTION_CATEGORICALS])
        for s in summaries:
            w.writerow(
                [s.customer_id, _fmt(s.label), _fmt(max(s.initial_amount, 0.0))]
                + [_fmt(v) for v in s.numerics]
                + [s.attributes[c] for c in TRANSACTION_CATEGORICALS]
            )


# ---------------------------------------------------------------------------
# splitting and encoding


def split(examples: Sequence, test_fraction: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle, then the first ``n - round(n * test_fraction)`` go to train."""
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(examples)
    if n < 2:
        raise ValueError("need at least 2 examples to split")
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    train = [examples[i] for i in order[: n - n_test]]
    test = [examples[i] for i in order[n - n_test:]]
    return train, test


@dataclass
class FeatureMatrix:
    """Column-encoded batch: float numerics and integer vocabulary indices."""

    numerics: np.ndarray
    categoricals: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))

    def __post_init__(self):
        self.numerics = np.asarray(self.numerics, dtype=np.float64)
        if self.numerics.ndim != 2:
            raise ValueError("numerics must be 2-D")
        n = self.numerics.shape[0]
        cats = np.asarray(self.categoricals, dtype=np.int64)
        if cats.size == 0:
            cats = np.zeros((n, 0), dtype=np.int64)
        if cats.ndim != 2 or cats.shape[0] != n:
            raise ValueError(f"categoricals shape {cats.shape} does not match {n} rows")
        self.categoricals = cats

    def __len__(self):
        return self.numerics.shape[0]

    def take(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(self.numerics[idx], self.categoricals[idx])


def encode(examples: Sequence[LtvExample], schema: FeatureSchema):
    """Return ``(FeatureMatrix, labels, first_purchase_values)``."""
    k, m = len(schema.numeric_features), len(schema.categorical_features)
    num = np.zeros((len(examples), k))
    cat = np.zeros((len(examples), m), dtype=np.int64)
    for i, ex in enumerate(examples):
        if len(ex.numerics) != k or len(ex.categoricals) != m:
            raise ValueError(f"example {ex.id}: vector lengths do not match schema")
        num[i] = ex.numerics
        cat[i] = ex.categoricals
    labels = np.array([ex.label for ex in examples], dtype=np.float64)
    fpv = np.array([ex.first_purchase_value for ex in examples], dtype=np.float64)
    return FeatureMatrix(num, cat), labels, fpv
