import datetime as dt
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from advtkge.dataset import (
    ConfigurationError,
    DataError,
    EncodingError,
    ParseError,
    RawQuadruple,
    TimeFormatError,
    bucket_timestamps,
    build_filter_index,
    build_vocabulary,
    calibrate_threshold,
    decode,
    encode,
    load_prepared,
    parse_quadruple_file,
    prepare,
    save_prepared,
)

names = st.text(alphabet="abcdefgh", min_size=1, max_size=3)
dates = st.dates(dt.date(2014, 1, 1), dt.date(2014, 12, 31)).map(lambda d: d.isoformat())
raw_quads = st.builds(RawQuadruple, names, names, names, dates)


# -- parsing --------------------------------------------------------------------

def test_parse_date_line():
    assert parse_quadruple_file("A\tr\tB\t2014-01-11") == [RawQuadruple("A", "r", "B", "2014-01-11")]


def test_parse_empty():
    assert parse_quadruple_file("") == []
    assert parse_quadruple_file("\n\n") == []


def test_parse_interval_columns():
    assert parse_quadruple_file("A\tr\tB\t1784\t1790\n") == [RawQuadruple("A", "r", "B", "(1784, 1790)")]


def test_parse_preserves_order_and_names_with_spaces():
    text = "South Korea\tMake statement\tJapan\t2014-03-02\nJapan\tConsult\tChina\t2014-01-01\n"
    out = parse_quadruple_file(text)
    assert [q.head for q in out] == ["South Korea", "Japan"]


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError) as err:
        parse_quadruple_file("A\tr\tB\t2014-01-01\nA\tr\tB\n", source="train.txt")
    assert err.value.line == 2 and "train.txt:2" in str(err.value)
    with pytest.raises(TimeFormatError) as err:
        parse_quadruple_file("A\tr\tB\t2014-01-01\nA\tr\tB\tyesterday\n")
    assert err.value.line == 2
    with pytest.raises(TimeFormatError):
        parse_quadruple_file("A\tr\tB\t17xx\t1790\n")


def test_raw_quadruple_rejects_empty_fields():
    with pytest.raises(ParseError):
        RawQuadruple("", "r", "B", "2014-01-01")


# -- vocabulary -------------------------------------------------------------------

def test_vocabulary_minimal():
    v = build_vocabulary([RawQuadruple("A", "r", "B", "2014-01-01")])
    assert (v.n_entities, v.n_relations) == (2, 1)


def test_vocabulary_first_appearance_and_dedup():
    raws = parse_quadruple_file("B\tr\tA\t2014-01-01\nA\ts\tC\t2014-01-02\nC\tr\tB\t2014-01-02\n")
    v = build_vocabulary(raws)
    assert v.entities == ["B", "A", "C"]
    assert v.relations == ["r", "s"]


@given(st.lists(raw_quads, min_size=1, max_size=30))
def test_vocabulary_bijection(raws):
    v = build_vocabulary(raws)
    assert sorted(v.entity_ids.values()) == list(range(v.n_entities))
    for name, i in v.entity_ids.items():
        assert v.entities[i] == name
    assert set(v.entities) == {q.head for q in raws} | {q.tail for q in raws}


# -- bucketing ----------------------------------------------------------------------

def test_per_day_span():
    raws = parse_quadruple_file("A\tr\tB\t2014-01-01\nA\tr\tB\t2014-12-31\n")
    b = bucket_timestamps(raws)
    assert b.mode == "per-day" and b.bucket_count == 365
    assert b.bucket("2014-01-01") == 0 and b.bucket("2014-12-31") == 364


def test_single_timestamp_one_bucket():
    raws = parse_quadruple_file("A\tr\tB\t2014-05-05\nC\tr\tB\t2014-05-05\n")
    assert bucket_timestamps(raws).bucket_count == 1


def test_mixed_grammars_rejected():
    raws = parse_quadruple_file("A\tr\tB\t2014-05-05\nC\tr\tB\t1900\t1910\n")
    with pytest.raises(ConfigurationError):
        bucket_timestamps(raws)


def test_thresholded_requires_positive_threshold():
    raws = parse_quadruple_file("A\tr\tB\t1900\t1910\n")
    with pytest.raises(ConfigurationError):
        bucket_timestamps(raws, "thresholded", 0)


def _interval_raws(years):
    return [RawQuadruple("A", "r", "B", f"({y}, {y + 1})") for y in years]


@given(st.lists(st.integers(1800, 1850), min_size=1, max_size=80), st.integers(1, 15))
def test_thresholded_invariants(years, threshold):
    raws = _interval_raws(years)
    b = bucket_timestamps(raws, "thresholded", threshold)
    assert all(x < y for x, y in zip(b.boundaries, b.boundaries[1:]))
    ids = [b.bucket(q.time) for q in raws]
    assert all(0 <= i < b.bucket_count for i in ids)
    counts = np.bincount(ids, minlength=b.bucket_count)
    assert (counts[:-1] >= threshold).all()
    # a year never straddles two buckets
    for y in set(years):
        assert len({b.bucket(f"({y}, {y})")}) == 1


def test_calibrate_threshold_hits_target():
    rng = np.random.default_rng(0)
    raws = _interval_raws(rng.integers(1700, 2000, 600).tolist())
    th = calibrate_threshold(raws, 20)
    assert bucket_timestamps(raws, "thresholded", th).bucket_count == 20
    assert th == 1 or bucket_timestamps(raws, "thresholded", th - 1).bucket_count != 20


# -- encoding ---------------------------------------------------------------------

def test_encode_direct_lookup():
    raws = [RawQuadruple("A", "r", "B", "2014-01-01")]
    v = build_vocabulary(raws)
    b = bucket_timestamps(raws)
    assert encode(raws, v, b).tolist() == [[0, 0, 1, 0]]


def test_encode_unseen_token():
    raws = [RawQuadruple("A", "r", "B", "2014-01-01")]
    v = build_vocabulary(raws)
    b = bucket_timestamps(raws)
    with pytest.raises(EncodingError, match="'Z'"):
        encode([RawQuadruple("Z", "r", "B", "2014-01-01")], v, b)


@given(st.lists(raw_quads, min_size=1, max_size=30))
def test_date_round_trip(raws):
    v = build_vocabulary(raws)
    b = bucket_timestamps(raws)
    back = decode(encode(raws, v, b), v, b)
    assert back == [(q.head, q.relation, q.tail, q.time) for q in raws]


@given(st.lists(st.integers(1800, 1900), min_size=2, max_size=40))
def test_interval_decode_covers_start_year(years):
    raws = _interval_raws(years)
    v = build_vocabulary(raws)
    b = bucket_timestamps(raws, "thresholded", 3)
    for q, (_, _, _, label) in zip(raws, decode(encode(raws, v, b), v, b)):
        lo, hi = (int(x) for x in label.strip("[]").split(","))
        y = int(q.time.strip("()").split(",")[0])
        assert lo <= y <= hi


# -- filter index -------------------------------------------------------------------

def test_filter_index_examples():
    idx = build_filter_index(np.array([[0, 0, 1, 0]]))
    assert idx.tail_truths[(0, 0, 0)] == {1}
    idx = build_filter_index(np.array([[0, 0, 1, 0], [0, 0, 2, 0]]))
    assert idx.tails(0, 0, 0) == {1, 2}


@given(st.integers(0, 2**31))
def test_filter_index_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    quads = np.stack([rng.integers(0, 6, 50), rng.integers(0, 3, 50), rng.integers(0, 6, 50), rng.integers(0, 4, 50)], 1)
    idx = build_filter_index(quads[:30], quads[30:40], quads[40:])
    for s in range(6):
        for p in range(3):
            for t in range(4):
                brute = {int(q[2]) for q in quads if q[0] == s and q[1] == p and q[3] == t}
                assert idx.tails(s, p, t) == brute
                brute_h = {int(q[0]) for q in quads if q[2] == s and q[1] == p and q[3] == t}
                assert idx.heads(p, s, t) == brute_h
    for q in quads:
        assert tuple(q) in idx
        assert q[0] in idx.truths(q, "head") and q[2] in idx.truths(q, "tail")


# -- prepared directories -----------------------------------------------------------

def _write_raw(root, extra_test=True):
    root.mkdir()
    (root / "train.txt").write_text("A\tr\tB\t2014-01-01\nB\ts\tC\t2014-01-03\nC\tr\tA\t2014-01-02\n")
    (root / "valid.txt").write_text("A\ts\tC\t2014-01-02\n")
    if extra_test:
        (root / "test.txt").write_text("B\tr\tA\t2014-01-03\n")
    return root


def test_prepare_and_reload(tmp_path):
    raw = _write_raw(tmp_path / "raw")
    ds = prepare(raw)
    out = save_prepared(ds, tmp_path / "prep")
    meta = json.loads((out / "metadata.json").read_text())
    assert (meta["n_entities"], meta["n_relations"], meta["n_buckets"]) == (3, 2, 3)
    assert (meta["n_train"], meta["n_valid"], meta["n_test"]) == (3, 1, 1)
    back = load_prepared(out)
    assert back.vocab.entities == ds.vocab.entities
    for name in ds.splits:
        assert np.array_equal(back.splits[name], ds.splits[name])
    assert (out / "entities.tsv").read_text().splitlines()[0] == "0\tA"
    assert (out / "train.txt").read_text().splitlines()[0] == "0 0 1 0"
    assert (out / "buckets.tsv").read_text().splitlines()[0] == "0\t2014-01-01\t2014-01-01"


def test_prepare_idempotent(tmp_path):
    raw = _write_raw(tmp_path / "raw")
    a = save_prepared(prepare(raw), tmp_path / "a")
    b = save_prepared(prepare(raw), tmp_path / "b")
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_prepare_missing_test_file(tmp_path):
    raw = _write_raw(tmp_path / "raw", extra_test=False)
    with pytest.raises(DataError, match="test"):
        prepare(raw)


def test_prepare_thresholded_records_threshold(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    lines = "".join(f"E{i}\tr\tE{i + 1}\t{1900 + i}\t{1901 + i}\n" for i in range(30))
    (raw / "train.txt").write_text(lines)
    (raw / "valid.txt").write_text("E1\tr\tE3\t1905\t1906\n")
    (raw / "test.txt").write_text("E2\tr\tE4\t1931\t1940\n")
    ds = prepare(raw, "auto", target_buckets=6)
    assert ds.metadata["n_buckets"] == 6
    assert ds.metadata["min_threshold"] == 5
    back = load_prepared(save_prepared(ds, tmp_path / "prep"))
    assert back.bucketing.boundaries == ds.bucketing.boundaries
    assert np.array_equal(back.splits["test"], ds.splits["test"])
