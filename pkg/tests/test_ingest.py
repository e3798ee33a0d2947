import json
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfgrewind.ingest import (
    FlatSnapshot,
    FormatError,
    FormatKind,
    apply_events,
    diff,
    flatten,
    ingest_trace,
    serialize,
)
from cfgrewind.ttkv import EventKind, KeyId, LogFormatError, Store, StoreError
from conftest import K, sec

FLAT, INI, JSON = FormatKind.FLAT, FormatKind.INI, FormatKind.JSON


def values(snapshot):
    return {str(k): v.decode() for k, v in snapshot.values.items()}


def test_flat_example():
    snap = flatten(b"# comment\n\nhost = example.org\nport=8080\nempty=\n", FLAT, "app")
    assert values(snap) == {"app:host": "example.org", "app:port": "8080", "app:empty": ""}


def test_ini_example():
    data = b"top=1\n; note\n[server]\nport = 80\n[a/b]\nx=y=z\n"
    assert values(flatten(data, INI, "app")) == {
        "app:top": "1",
        "app:server/port": "80",
        "app:a/b/x": "y=z",
    }


def test_json_example_matches_path_enumeration():
    doc = {"ui": {"theme": "dark", "size": 1.50}, "recent": ["a", "b"], "n": None, "ok": True, "e": {}, "l": []}
    text = '{"ui": {"theme": "dark", "size": 1.50}, "recent": ["a", "b"], "n": null, "ok": true, "e": {}, "l": []}'
    snap = flatten(text.encode(), JSON, "app")

    def paths(node, prefix=()):
        if isinstance(node, dict) and node:
            for k, v in node.items():
                yield from paths(v, (*prefix, k))
        elif isinstance(node, list) and node:
            for i, v in enumerate(node):
                yield from paths(v, (*prefix, str(i)))
        else:
            yield prefix, node

    expected = {KeyId("app", p): v for p, v in paths(doc)}
    assert set(snap.values) == set(expected)
    for key, leaf in expected.items():
        assert json.loads(snap.values[key]) == leaf
    assert snap.values[K("ui/size")] == b"1.50"  # source text kept


def test_json_digit_object_keys_stay_distinct_from_indices():
    snap = flatten(b'{"a": {"0": 1}, "b": [1], "": 2, "x/y": 3}', JSON, "app")
    assert set(map(str, snap.values)) == {"app:a/%30", "app:b/0", "app:%", "app:x%2Fy"}
    back = flatten(serialize(snap.values, JSON), JSON, "app")
    assert back.values == snap.values


def test_duplicate_keys_last_wins(caplog):
    with caplog.at_level(logging.WARNING):
        snap = flatten(b"a=1\nb=2\na=3\n", FLAT, "app")
    assert values(snap) == {"app:b": "2", "app:a": "3"}
    assert "duplicate" in caplog.text


@pytest.mark.parametrize(
    "kind, data, offset",
    [
        (FLAT, b"ok=1\nbroken\n", 5),
        (FLAT, b"a=1\n=2\n", 4),
        (INI, b"[s]\na=1\n[bad\n", 8),
        (INI, b"a/b=1\n", 0),
        (JSON, b'{"a": 1,, }', 8),
        (JSON, b"42", 0),
        (FLAT, b"a=1\nb=\xff\n", 6),
    ],
)
def test_format_errors_carry_byte_offset(kind, data, offset):
    with pytest.raises(FormatError) as info:
        flatten(data, kind, "app")
    assert info.value.offset == offset


def test_diff_examples():
    before = FlatSnapshot("app", {K("a"): b"1", K("b"): b"2"})
    after = FlatSnapshot("app", {K("a"): b"1", K("b"): b"3", K("c"): b"4"})
    evs = diff(before, after, sec(7))
    assert [(str(e.key), e.kind, e.value) for e in evs] == [
        ("app:b", EventKind.WRITE, b"3"),
        ("app:c", EventKind.WRITE, b"4"),
    ]
    assert all(e.timestamp == sec(7) for e in evs)
    gone = diff(after, FlatSnapshot("app", {K("a"): b"1"}), 9)
    assert [(str(e.key), e.kind) for e in gone] == [("app:b", EventKind.DELETE), ("app:c", EventKind.DELETE)]
    assert diff(after, after, 1) == []


def test_diff_rejects_mismatched_tags():
    with pytest.raises(ValueError, match="different stores"):
        diff(FlatSnapshot("a"), FlatSnapshot("b"), 0)


# --- randomized snapshots --------------------------------------------------

_name = st.text("abcdefgh_-.", min_size=1, max_size=4)
_value = st.text("xyz 0123=#;[]/", max_size=5).map(str.strip)


def flat_maps():
    return st.dictionaries(_name, _value, max_size=8).map(
        lambda d: {KeyId("app", (k,)): v.encode() for k, v in d.items()}
    )


def ini_maps():
    path = st.tuples(st.lists(_name, max_size=2), _name).map(lambda p: (*p[0], p[1]))
    return st.dictionaries(path, _value, max_size=8).map(
        lambda d: {KeyId("app", p): v.encode() for p, v in d.items()}
    )


_json_leaf = st.one_of(
    st.none(), st.booleans(), st.integers(-99, 99), st.text(max_size=4),
    st.floats(allow_nan=False, allow_infinity=False),
)
json_docs = st.recursive(
    _json_leaf,
    lambda kids: st.one_of(st.lists(kids, max_size=3), st.dictionaries(st.text(max_size=3), kids, max_size=3)),
    max_leaves=12,
).filter(lambda d: isinstance(d, (dict, list)))


def json_maps():
    return json_docs.map(lambda d: flatten(json.dumps(d).encode(), JSON, "app").values)


def _roundtrip(kind, m):
    # serialize then reparse; the map must come back unchanged
    return flatten(serialize(m, kind), kind, "app").values


@pytest.mark.parametrize("kind, maps", [(FLAT, flat_maps), (INI, ini_maps), (JSON, json_maps)])
def test_diff_apply_reproduces_target(kind, maps):
    @settings(max_examples=150, deadline=None)
    @given(maps(), maps())
    def check(a, b):
        a, b = _roundtrip(kind, a), _roundtrip(kind, b)
        evs = diff(FlatSnapshot("app", a), FlatSnapshot("app", b), 5)
        assert apply_events(a, evs) == b
        back = diff(FlatSnapshot("app", b), FlatSnapshot("app", a), 6)
        assert {e.key for e in evs} == {e.key for e in back}
        assert apply_events(b, back) == a

    check()


@pytest.mark.parametrize("kind, maps", [(FLAT, flat_maps), (INI, ini_maps), (JSON, json_maps)])
def test_serialize_roundtrip(kind, maps):
    @settings(max_examples=100, deadline=None)
    @given(maps())
    def check(m):
        once = _roundtrip(kind, m)
        assert once == m
        assert _roundtrip(kind, once) == once

    check()


def test_serialize_rejects_unrepresentable():
    with pytest.raises(ValueError):
        serialize({K("a/b"): b"1"}, FLAT)
    with pytest.raises(ValueError):
        serialize({K("a"): b"x\ny"}, INI)
    with pytest.raises(ValueError):
        serialize({K("a"): b"1", K("a/b"): b"2"}, JSON)


def test_ingest_trace_counts_and_is_atomic(tmp_path):
    good = b"1.0\tW\tapp\ta\tMQ==\n2.0\tD\tapp\ta\t-\n"
    store = Store()
    assert ingest_trace(good, store) == 2
    bad = tmp_path / "bad.log"
    bad.write_bytes(b"3.0\tW\tapp\tb\tMQ==\n4.0\tW\tapp\t\tMQ==\n")
    with pytest.raises((LogFormatError, StoreError)):
        ingest_trace(bad, store)
    assert len(store) == 2
