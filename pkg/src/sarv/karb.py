"""Quality benchmarking with weighted symbolic qualifiers.

Records become ``Has(feature, value)`` facts, a rule program is saturated over
them, and the firings of its ``[signal]`` rules are combined linearly into a
score. Weights and threshold are fitted by random-restart hill climbing.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .engine import Limits, SaturationResult, saturate
from .parser import Program, render
from .terms import Atom, Num, Term, app

SIGNAL_GROUP = "signal"
LABEL = "label"

Value = Union[Fraction, str]


class DatasetError(ValueError):
    """Malformed dataset; ``row`` is the 1-based line number in the file."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass(frozen=True)
class Record:
    id: str
    features: Mapping[str, Value]
    label: Optional[int] = None


# ------------------------------------------------------------------ ingestion

_NUMBER_RE = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)\Z")


def parse_cell(cell: str) -> Value:
    s = cell.strip()
    if _NUMBER_RE.match(s):
        return Fraction(s)
    return s


def ingest_csv(text: str, schema: Optional[Sequence[str]] = None, *, labeled: bool = True) -> list[Record]:
    """Parse a CSV dataset. Numeric cells become exact fractions.

    An ``id`` column, if present, names the records; otherwise they are
    numbered from 1. ``schema`` lists the expected feature columns.
    """
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not any(c.strip() for c in rows[0]):
        raise DatasetError("missing header row")
    header = [h.strip() for h in rows[0]]
    seen: set[str] = set()
    for h in header:
        if h in seen:
            raise DatasetError(f"duplicate header name {h!r}", 1)
        seen.add(h)
    if labeled and LABEL not in header:
        raise DatasetError("missing 'label' column")
    feature_cols = [h for h in header if h not in (LABEL, "id")]
    if schema is not None and sorted(feature_cols) != sorted(schema):
        raise DatasetError(f"columns {feature_cols} do not match schema {list(schema)}", 1)

    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetError(f"expected {len(header)} cells, found {len(row)}", lineno)
        cells = dict(zip(header, row))
        label = None
        if LABEL in cells:
            raw = cells[LABEL].strip()
            if raw:
                try:
                    label = int(raw)
                except ValueError:
                    raise DatasetError(f"label {raw!r} is not an integer", lineno) from None
            elif labeled:
                raise DatasetError("empty label", lineno)
        features = {c: parse_cell(cells[c]) for c in feature_cols}
        rid = cells["id"].strip() if "id" in cells else str(lineno - 1)
        out.append(Record(rid, features, label))
    return out


def format_value(v: Value) -> str:
    if isinstance(v, Fraction):
        return Num(v).text
    return v


def write_csv(records: Sequence[Record], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", *columns, LABEL])
    for r in records:
        w.writerow([r.id, *(format_value(r.features.get(c, "")) for c in columns), "" if r.label is None else r.label])
    return buf.getvalue()


# ------------------------------------------------------------------- encoding

_BAD_CHARS = re.compile(r"[^A-Za-z0-9_]+")


def sanitize_atom(raw: str) -> Atom:
    s = _BAD_CHARS.sub("_", raw.strip()).strip("_")
    if not s:
        raise ValueError(f"cannot turn {raw!r} into an atom")
    if s[0].isdigit():
        s = "v_" + s
    if s in ("AND", "OR"):
        s = s.lower()
    return Atom(s)


def _value_term(v: Value) -> Term:
    if isinstance(v, Fraction):
        return Num(v)
    return sanitize_atom(v)


def encode_record(r: Record) -> list[Term]:
    """``Has(name, value)`` per non-empty feature, in canonical order."""
    names: dict[Atom, str] = {}
    values: dict[Term, str] = {}
    facts = []
    for name, v in r.features.items():
        if isinstance(v, str) and not v.strip():
            continue
        a = sanitize_atom(name)
        if a in names and names[a] != name:
            raise ValueError(f"feature names {names[a]!r} and {name!r} collide as {a.text}")
        names[a] = name
        vt = _value_term(v)
        if isinstance(v, str):
            if vt in values and values[vt] != v:
                raise ValueError(f"values {values[vt]!r} and {v!r} collide as {vt.text}")
            values[vt] = v
        facts.append(app("Has", a, vt))
    return sorted(facts)


# ------------------------------------------------------------------ qualifier


@dataclass(frozen=True)
class Binarization:
    """Label predicate such as ``label = 5`` or ``label >= 4``."""

    op: str
    value: int

    _OPS = {"=": lambda a, b: a == b, ">=": lambda a, b: a >= b, "<=": lambda a, b: a <= b,
            ">": lambda a, b: a > b, "<": lambda a, b: a < b}

    @classmethod
    def parse(cls, text: str) -> "Binarization":
        m = re.fullmatch(r"\s*label\s*(>=|<=|=|<|>)\s*(-?\d+)\s*", text)
        if not m:
            raise ValueError(f"bad binarization {text!r}")
        return cls(m.group(1), int(m.group(2)))

    def __call__(self, label: int) -> bool:
        return self._OPS[self.op](label, self.value)

    def __str__(self) -> str:
        return f"label {self.op} {self.value}"


def program_digest(program: Program) -> str:
    return "sha256:" + hashlib.sha256(render(program).encode("utf-8")).hexdigest()


def signal_rules(program: Program) -> list[str]:
    return [r.id for r in program.rules if r.group == SIGNAL_GROUP]


@dataclass
class Qualifier:
    rules: Program
    weights: dict[str, float]
    threshold: float
    binarization: Binarization = field(default_factory=lambda: Binarization("=", 5))

    def __post_init__(self) -> None:
        known = {r.id for r in self.rules.rules}
        for rid in self.weights:
            if rid not in known:
                raise ValueError(f"weighted rule {rid!r} is not in the program")
        if not math.isfinite(self.threshold):
            raise ValueError("threshold must be finite")

    @property
    def signal_ids(self) -> list[str]:
        return signal_rules(self.rules)

    def weight_vector(self) -> np.ndarray:
        return np.array([self.weights.get(rid, 0.0) for rid in self.signal_ids], dtype=float)

    def to_json(self) -> str:
        doc = {
            "rules_digest": program_digest(self.rules),
            "weights": {rid: self.weights.get(rid, 0.0) for rid in self.signal_ids},
            "threshold": self.threshold,
            "binarization": str(self.binarization),
        }
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str, rules: Program) -> "Qualifier":
        doc = json.loads(text)
        if doc.get("rules_digest") != program_digest(rules):
            raise ValueError("qualifier was fitted against a different rule program")
        return cls(rules, {k: float(v) for k, v in doc["weights"].items()}, float(doc["threshold"]),
                   Binarization.parse(doc["binarization"]))


# -------------------------------------------------------------------- scoring


def firing_counts(result: SaturationResult, signal_ids: Sequence[str]) -> np.ndarray:
    """Per signal rule, the number of facts whose earliest justification cites it."""
    index = {rid: k for k, rid in enumerate(signal_ids)}
    out = np.zeros(len(signal_ids), dtype=float)
    for fact in result.memory:
        j = fact.earliest()
        if j is not None and j.rule_id in index:
            out[index[j.rule_id]] += 1
    return out


def _record_counts(args: tuple[Program, Record, tuple[str, ...], Limits]) -> tuple[np.ndarray, bool]:
    program, record, ids, limits = args
    result = saturate(program, encode_record(record), limits)
    return firing_counts(result, ids), not result.fixpoint


@dataclass
class FeatureMatrix:
    """Signal-rule firing counts per record, computed once per dataset."""

    counts: np.ndarray  # shape (records, signal rules)
    bound_hits: np.ndarray  # bool per record
    signal_ids: tuple[str, ...]


def feature_matrix(program: Program, data: Sequence[Record], limits: Limits = Limits(),
                   workers: int = 1) -> FeatureMatrix:
    ids = tuple(signal_rules(program))
    jobs = [(program, r, ids, limits) for r in data]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_record_counts, jobs, chunksize=16))
    else:
        rows = [_record_counts(j) for j in jobs]
    counts = np.array([c for c, _ in rows], dtype=float).reshape(len(rows), len(ids))
    hits = np.array([h for _, h in rows], dtype=bool)
    return FeatureMatrix(counts, hits, ids)


def qualifier_score(q: Qualifier, r: Record, limits: Limits = Limits()) -> float:
    counts, _ = _record_counts((q.rules, r, tuple(q.signal_ids), limits))
    return float(counts @ q.weight_vector())


def predict(q: Qualifier, r: Record) -> bool:
    return qualifier_score(q, r) >= q.threshold


def _targets(data: Sequence[Record], binarization: Binarization) -> np.ndarray:
    if not data:
        raise ValueError("empty dataset")
    if any(r.label is None for r in data):
        raise ValueError("unlabeled record in training data")
    return np.array([binarization(r.label) for r in data], dtype=bool)


def _objective(counts: np.ndarray, y: np.ndarray, w: np.ndarray, threshold: float, objective: str) -> float:
    score = counts @ w
    if objective == "error_rate":
        return float(np.mean((score >= threshold) != y))
    if objective == "mse":
        return float(np.mean((score - y.astype(float)) ** 2))
    raise ValueError(f"unknown objective {objective!r}")


def fitness(q: Qualifier, data: Sequence[Record], objective: str = "error_rate",
            matrix: Optional[FeatureMatrix] = None) -> float:
    y = _targets(data, q.binarization)
    m = matrix or feature_matrix(q.rules, data)
    return _objective(m.counts, y, q.weight_vector(), q.threshold, objective)


# -------------------------------------------------------------------- fitting


@dataclass(frozen=True)
class FitConfig:
    seed: int = 0
    iterations: int = 500
    restarts: int = 2
    step: float = 0.5
    decay: float = 0.999
    objective: str = "error_rate"

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.restarts < 1:
            raise ValueError("iterations and restarts must be at least 1")
        if self.objective not in ("error_rate", "mse"):
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass
class RestartTrace:
    initial_fitness: float
    final_fitness: float
    trace: list[float]


@dataclass
class FitResult:
    qualifier: Qualifier
    fitness: float
    restarts: list[RestartTrace]


def hill_climb(objective, dims: int, cfg: FitConfig) -> tuple[np.ndarray, float, list[RestartTrace]]:
    """Minimize ``objective(x)`` over R^dims by random-restart hill climbing."""
    rng = np.random.default_rng(cfg.seed)
    best_x, best_f = None, math.inf
    traces = []
    for _ in range(cfg.restarts):
        x = rng.uniform(-1.0, 1.0, dims)
        f = objective(x)
        start = f
        trace = [f]
        step = cfg.step
        for _ in range(cfg.iterations):
            i = int(rng.integers(dims))
            cand = x.copy()
            cand[i] += step if rng.random() < 0.5 else -step
            fc = objective(cand)
            if fc <= f:
                x, f = cand, fc
            trace.append(f)
            step *= cfg.decay
        traces.append(RestartTrace(start, f, trace))
        if f < best_f:
            best_x, best_f = x, f
    return best_x, best_f, traces


def fit_with_trace(rules: Program, data: Sequence[Record], cfg: FitConfig = FitConfig(),
                   binarization: Binarization = Binarization("=", 5),
                   matrix: Optional[FeatureMatrix] = None, workers: int = 1) -> FitResult:
    ids = signal_rules(rules)
    if not ids:
        raise ValueError("program has no [signal] rules")
    y = _targets(data, binarization)
    m = matrix or feature_matrix(rules, data, workers=workers)
    k = len(ids)

    def objective(x: np.ndarray) -> float:
        return _objective(m.counts, y, x[:k], x[k], cfg.objective)

    x, f, traces = hill_climb(objective, k + 1, cfg)
    q = Qualifier(rules, {rid: float(x[i]) for i, rid in enumerate(ids)}, float(x[k]), binarization)
    return FitResult(q, f, traces)


def fit(rules: Program, data: Sequence[Record], cfg: FitConfig = FitConfig(),
        binarization: Binarization = Binarization("=", 5)) -> Qualifier:
    return fit_with_trace(rules, data, cfg, binarization).qualifier


# ----------------------------------------------------------------- evaluation


def evaluate(q: Qualifier, data: Sequence[Record], matrix: Optional[FeatureMatrix] = None) -> dict:
    y = _targets(data, q.binarization)
    m = matrix or feature_matrix(q.rules, data)
    pred = (m.counts @ q.weight_vector()) >= q.threshold
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    n = len(y)
    positives = int(np.sum(y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "n": n,
        "positives": positives,
        "accuracy": float(np.mean(pred == y)),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "baseline_accuracy": max(positives, n - positives) / n,
        "bound_hits": int(np.sum(m.bound_hits)),
    }


# ------------------------------------------------------------------ synthetic

DEFAULT_SCHEMA: dict[str, list[Value]] = {
    "speed": [Fraction(i) for i in range(1, 6)],
    "stability": [Fraction(i) for i in range(1, 6)],
    "ui": ["poor", "fair", "good"],
    "ads": ["none", "few", "many"],
    "privacy": [Fraction(i) for i in range(1, 6)],
}


@dataclass
class SyntheticData:
    records: list[Record]
    clean_labels: list[int]
    flipped: np.ndarray  # bool mask of noisy labels


def generate_synthetic(seed: int, n: int, planted: Qualifier, noise: float = 0.05,
                       schema: Mapping[str, Sequence[Value]] = DEFAULT_SCHEMA) -> SyntheticData:
    """Draw ``n`` records, label them with ``planted`` (positive class gets the
    binarization's value, negatives a random other level in 1..4) and flip a
    seeded ``noise`` fraction of the binarized labels."""
    rng = np.random.default_rng(seed)
    columns = list(schema)
    pos_label = planted.binarization.value
    neg_levels = [v for v in range(1, 6) if not planted.binarization(v)]
    pos_levels = [v for v in range(1, 6) if planted.binarization(v)] or [pos_label]

    raw = []
    for i in range(n):
        feats = {c: schema[c][int(rng.integers(len(schema[c])))] for c in columns}
        raw.append(Record(str(i + 1), feats))
    matrix = feature_matrix(planted.rules, raw)
    positive = (matrix.counts @ planted.weight_vector()) >= planted.threshold if n else np.zeros(0, bool)

    clean = []
    for p in positive:
        levels = pos_levels if p else neg_levels
        clean.append(int(levels[int(rng.integers(len(levels)))]))
    flipped = rng.random(n) < noise
    labels = []
    for c, p, f in zip(clean, positive, flipped):
        if not f:
            labels.append(c)
            continue
        levels = neg_levels if p else pos_levels
        labels.append(int(levels[int(rng.integers(len(levels)))]))
    records = [Record(r.id, r.features, lab) for r, lab in zip(raw, labels)]
    return SyntheticData(records, clean, flipped)
