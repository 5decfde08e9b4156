"""Quadruple files, vocabularies, time bucketing and the filter index."""
from __future__ import annotations

import bisect
import datetime as dt
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLITS = ("train", "valid", "test")

_DATE_RE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")
_INTERVAL_RE = re.compile(r"^\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)$")
_YEAR_RE = re.compile(r"^-?\d+$")


class DataError(ValueError):
    """Malformed input data (bad line, bad time token, unseen token)."""


class ParseError(DataError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class TimeFormatError(ParseError):
    pass


class ConfigurationError(DataError):
    pass


class EncodingError(DataError):
    pass


@dataclass(frozen=True)
class RawQuadruple:
    head: str
    relation: str
    tail: str
    time: str

    def __post_init__(self):
        for name in ("head", "relation", "tail", "time"):
            if not getattr(self, name):
                raise ParseError(f"empty {name} field")
        time_grammar(self.time)


def time_grammar(token: str) -> str:
    """'date' or 'interval'; raises TimeFormatError otherwise."""
    if _DATE_RE.match(token):
        return "date"
    if _INTERVAL_RE.match(token):
        return "interval"
    raise TimeFormatError(f"unrecognized time token {token!r}")


def parse_date(token: str) -> dt.date:
    m = _DATE_RE.match(token)
    if not m:
        raise TimeFormatError(f"not a date token: {token!r}")
    try:
        return dt.date(int(m[1]), int(m[2]), int(m[3]))
    except ValueError as exc:
        raise TimeFormatError(f"invalid date {token!r}: {exc}") from None


def interval_start(token: str) -> int:
    m = _INTERVAL_RE.match(token)
    if not m:
        raise TimeFormatError(f"not an interval token: {token!r}")
    return int(m[1])


def parse_quadruple_file(text: str, source: str | None = None) -> list[RawQuadruple]:
    """Parse tab-separated facts. A 5th column is read as the interval end."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.rstrip("\r\n").split("\t")
        if len(cols) < 4:
            raise ParseError(f"expected >= 4 tab-separated fields, got {len(cols)}", lineno, source)
        head, rel, tail = (c.strip() for c in cols[:3])
        start = cols[3].strip()
        if len(cols) >= 5 and cols[4].strip():
            end = cols[4].strip()
            if not (_YEAR_RE.match(start) and _YEAR_RE.match(end)):
                raise TimeFormatError(f"interval columns must be integer years, got {start!r}, {end!r}", lineno, source)
            time = f"({int(start)}, {int(end)})"
        else:
            time = start
        try:
            out.append(RawQuadruple(head, rel, tail, time))
        except ParseError as exc:
            kind = type(exc)
            raise kind(str(exc), lineno, source) from None
    return out


@dataclass
class Vocabulary:
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.entity_ids = {n: i for i, n in enumerate(self.entities)}
        self.relation_ids = {n: i for i, n in enumerate(self.relations)}
        if len(self.entity_ids) != len(self.entities) or len(self.relation_ids) != len(self.relations):
            raise ValueError("vocabulary names must be unique")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def entity_id(self, name: str) -> int:
        try:
            return self.entity_ids[name]
        except KeyError:
            raise EncodingError(f"unseen entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self.relation_ids[name]
        except KeyError:
            raise EncodingError(f"unseen relation {name!r}") from None


def build_vocabulary(raws: Iterable[RawQuadruple]) -> Vocabulary:
    """Ids in order of first appearance (head before tail)."""
    ents: dict[str, None] = {}
    rels: dict[str, None] = {}
    for q in raws:
        ents.setdefault(q.head)
        rels.setdefault(q.relation)
        ents.setdefault(q.tail)
    if not ents:
        raise ValueError("cannot build a vocabulary from no facts")
    return Vocabulary(list(ents), list(rels))


@dataclass
class TimeBucketing:
    """Maps raw time tokens to bucket ids.

    ``per-day``: boundaries are day ordinals, one bucket per calendar day from
    the earliest date. ``thresholded``: boundaries are bucket start years.
    """

    mode: str
    boundaries: list[int]
    bucket_count: int
    min_threshold: int | None = None
    ends: list[int] | None = None

    def bucket(self, token: str) -> int:
        if self.mode == "per-day":
            if time_grammar(token) != "date":
                raise ConfigurationError(f"per-day bucketing got non-date token {token!r}")
            b = parse_date(token).toordinal() - self.boundaries[0]
            if not 0 <= b < self.bucket_count:
                raise EncodingError(f"date {token!r} outside the bucketed span")
            return b
        if time_grammar(token) != "interval":
            raise ConfigurationError(f"thresholded bucketing got non-interval token {token!r}")
        year = interval_start(token)
        return max(bisect.bisect_right(self.boundaries, year) - 1, 0)

    def table(self) -> list[tuple[int, str, str]]:
        rows = []
        if self.mode == "per-day":
            for b in range(self.bucket_count):
                day = dt.date.fromordinal(self.boundaries[0] + b).isoformat()
                rows.append((b, day, day))
        else:
            for b, start in enumerate(self.boundaries):
                rows.append((b, str(start), str(self.ends[b])))
        return rows


def _grammar_of(raws: Sequence[RawQuadruple]) -> str:
    grammars = {time_grammar(q.time) for q in raws}
    if len(grammars) > 1:
        raise ConfigurationError("dataset mixes date and interval time tokens")
    if not grammars:
        raise ConfigurationError("no facts to bucket")
    return grammars.pop()


def bucket_timestamps(raws: Sequence[RawQuadruple], mode: str = "auto", min_threshold: int | None = None) -> TimeBucketing:
    """Build a bucketing from ``raws`` (thresholds count these facts).

    ``mode`` is ``per-day``, ``thresholded`` or ``auto`` (picked from the
    time grammar).
    """
    grammar = _grammar_of(raws)
    if mode == "auto":
        mode = "per-day" if grammar == "date" else "thresholded"
    if mode == "per-day":
        if grammar != "date":
            raise ConfigurationError("per-day bucketing needs date tokens")
        days = [parse_date(q.time).toordinal() for q in raws]
        lo, hi = min(days), max(days)
        return TimeBucketing("per-day", list(range(lo, hi + 1)), hi - lo + 1)
    if mode != "thresholded":
        raise ConfigurationError(f"unknown bucketing mode {mode!r}")
    if grammar != "interval":
        raise ConfigurationError("thresholded bucketing needs interval tokens")
    if min_threshold is None or min_threshold < 1:
        raise ConfigurationError("thresholded bucketing needs min_threshold >= 1")
    counts: dict[int, int] = defaultdict(int)
    for q in raws:
        counts[interval_start(q.time)] += 1
    starts, ends = [], []
    filled = 0
    for year in sorted(counts):
        if filled == 0:
            starts.append(year)
            ends.append(year)
        ends[-1] = year
        filled += counts[year]
        if filled >= min_threshold:
            filled = 0
    return TimeBucketing("thresholded", starts, len(starts), min_threshold, ends)


def calibrate_threshold(raws: Sequence[RawQuadruple], target_buckets: int) -> int:
    """Smallest min_threshold whose greedy bucketing yields ``target_buckets``.

    Bucket count is non-increasing in the threshold, so a binary search over
    [1, n_facts] finds the boundary; raises if no threshold hits the target.
    """
    lo, hi = 1, max(len(raws), 1)
    count = lambda th: bucket_timestamps(raws, "thresholded", th).bucket_count  # noqa: E731
    if count(lo) < target_buckets:
        raise ConfigurationError(f"at most {count(lo)} buckets are possible, {target_buckets} requested")
    while lo < hi:
        mid = (lo + hi) // 2
        if count(mid) > target_buckets:
            lo = mid + 1
        else:
            hi = mid
    if count(lo) != target_buckets:
        raise ConfigurationError(f"no threshold yields exactly {target_buckets} buckets")
    return lo


def encode(raws: Sequence[RawQuadruple], vocab: Vocabulary, bucketing: TimeBucketing) -> np.ndarray:
    """(n, 4) int64 array of (head, relation, tail, bucket)."""
    out = np.empty((len(raws), 4), dtype=np.int64)
    for i, q in enumerate(raws):
        out[i] = (vocab.entity_id(q.head), vocab.relation_id(q.relation), vocab.entity_id(q.tail), bucketing.bucket(q.time))
    return out


def decode(quads, vocab: Vocabulary, bucketing: TimeBucketing) -> list[tuple[str, str, str, str]]:
    rows = bucketing.table()
    out = []
    for s, p, o, t in np.asarray(quads, dtype=np.int64).reshape(-1, 4):
        _, start, end = rows[t]
        time = start if bucketing.mode == "per-day" else f"[{start}, {end}]"
        out.append((vocab.entities[s], vocab.relations[p], vocab.entities[o], time))
    return out


class FilterIndex:
    """Known true entities for every (s, p, ?, t) and (?, p, o, t) query."""

    def __init__(self, quads=()):
        self.tail_truths: dict[tuple[int, int, int], set[int]] = defaultdict(set)
        self.head_truths: dict[tuple[int, int, int], set[int]] = defaultdict(set)
        self.add(quads)

    def add(self, quads):
        for s, p, o, t in np.asarray(quads, dtype=np.int64).reshape(-1, 4).tolist():
            self.tail_truths[(s, p, t)].add(o)
            self.head_truths[(p, o, t)].add(s)

    def tails(self, s, p, t) -> set[int]:
        return self.tail_truths.get((int(s), int(p), int(t)), set())

    def heads(self, p, o, t) -> set[int]:
        return self.head_truths.get((int(p), int(o), int(t)), set())

    def truths(self, quad, slot: str) -> set[int]:
        s, p, o, t = (int(x) for x in quad)
        return self.heads(p, o, t) if slot == "head" else self.tails(s, p, t)

    def __contains__(self, quad) -> bool:
        s, p, o, t = (int(x) for x in quad)
        return o in self.tails(s, p, t)


def build_filter_index(*splits) -> FilterIndex:
    idx = FilterIndex()
    for quads in splits:
        idx.add(quads)
    return idx


# -- prepared directories ------------------------------------------------------

@dataclass
class PreparedDataset:
    vocab: Vocabulary
    bucketing: TimeBucketing
    splits: dict[str, np.ndarray]
    metadata: dict

    @property
    def n_buckets(self) -> int:
        return self.bucketing.bucket_count

    def filter_index(self) -> FilterIndex:
        return build_filter_index(*self.splits.values())


def read_raw_splits(raw_dir) -> dict[str, list[RawQuadruple]]:
    raw_dir = Path(raw_dir)
    out = {}
    for split in SPLITS:
        path = None
        for candidate in (raw_dir / split, raw_dir / f"{split}.txt", raw_dir / f"{split}.tsv"):
            if candidate.is_file():
                path = candidate
                break
        if path is None:
            raise DataError(f"missing {split} file in {raw_dir}")
        out[split] = parse_quadruple_file(path.read_text(encoding="utf-8"), source=str(path))
    return out


def prepare(raw_dir, bucketing_mode="auto", min_threshold=None, target_buckets=None) -> PreparedDataset:
    raws = read_raw_splits(raw_dir)
    everything = raws["train"] + raws["valid"] + raws["test"]
    vocab = build_vocabulary(everything)
    grammar = _grammar_of(everything)
    if (bucketing_mode == "thresholded" or (bucketing_mode == "auto" and grammar == "interval")) and min_threshold is None:
        if target_buckets is None:
            raise ConfigurationError("thresholded bucketing needs min_threshold or target_buckets")
        min_threshold = calibrate_threshold(raws["train"], target_buckets)
    if bucketing_mode == "per-day" or (bucketing_mode == "auto" and grammar == "date"):
        bucketing = bucket_timestamps(everything, "per-day")
    else:
        bucketing = bucket_timestamps(raws["train"], "thresholded", min_threshold)
    splits = {name: encode(r, vocab, bucketing) for name, r in raws.items()}
    metadata = {
        "n_entities": vocab.n_entities,
        "n_relations": vocab.n_relations,
        "n_buckets": bucketing.bucket_count,
        "bucketing": bucketing.mode,
        "min_threshold": bucketing.min_threshold,
        **{f"n_{name}": int(len(q)) for name, q in splits.items()},
    }
    return PreparedDataset(vocab, bucketing, splits, metadata)


def save_prepared(ds: PreparedDataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "entities.tsv").write_text("".join(f"{i}\t{n}\n" for i, n in enumerate(ds.vocab.entities)), encoding="utf-8")
    (out / "relations.tsv").write_text("".join(f"{i}\t{n}\n" for i, n in enumerate(ds.vocab.relations)), encoding="utf-8")
    (out / "buckets.tsv").write_text("".join(f"{b}\t{s}\t{e}\n" for b, s, e in ds.bucketing.table()), encoding="utf-8")
    for name, quads in ds.splits.items():
        (out / f"{name}.txt").write_text("".join(" ".join(map(str, row)) + "\n" for row in quads.tolist()), encoding="ascii")
    (out / "metadata.json").write_text(json.dumps(ds.metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out


def _read_vocab(path: Path) -> list[str]:
    names = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        idx, _, name = line.partition("\t")
        if int(idx) != len(names):
            raise ParseError("vocabulary ids must be contiguous", lineno, str(path))
        names.append(name)
    return names


def load_prepared(prep_dir) -> PreparedDataset:
    d = Path(prep_dir)
    for name in ("entities.tsv", "relations.tsv", "buckets.tsv", "metadata.json"):
        if not (d / name).is_file():
            raise DataError(f"{d} is not a prepared dataset (missing {name})")
    vocab = Vocabulary(_read_vocab(d / "entities.tsv"), _read_vocab(d / "relations.tsv"))
    meta = json.loads((d / "metadata.json").read_text(encoding="utf-8"))
    table = [line.split("\t") for line in (d / "buckets.tsv").read_text(encoding="utf-8").splitlines()]
    if meta["bucketing"] == "per-day":
        lo = dt.date.fromisoformat(table[0][1]).toordinal()
        bucketing = TimeBucketing("per-day", [lo + i for i in range(len(table))], len(table))
    else:
        bucketing = TimeBucketing(
            "thresholded", [int(r[1]) for r in table], len(table), meta.get("min_threshold"), [int(r[2]) for r in table]
        )
    splits = {}
    for name in SPLITS:
        path = d / f"{name}.txt"
        if not path.is_file():
            raise DataError(f"missing encoded split {path}")
        text = path.read_text(encoding="ascii").split()
        splits[name] = np.array(text, dtype=np.int64).reshape(-1, 4)
    return PreparedDataset(vocab, bucketing, splits, meta)
