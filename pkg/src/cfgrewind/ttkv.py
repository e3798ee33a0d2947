"""Time-travel key-value store.

Every configuration key maps to its full history of timestamped writes and
deletions. The store is append-only; it is persisted as a newline-delimited
event log that doubles as the trace exchange format::

    <seconds>.<nanos>\\t<W|D>\\t<store-tag>\\t<key-path>\\t<base64(value) or ->

Timestamps are held internally as integer nanoseconds since the epoch so
that window arithmetic and "just before" instants stay exact.
"""

from __future__ import annotations

import base64
import binascii
import bisect
import enum
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Union

logger = logging.getLogger(__name__)

NS_PER_SECOND = 1_000_000_000


class StoreError(ValueError):
    """Malformed event or invalid query against the store."""


class LogFormatError(StoreError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class Absent(enum.Enum):
    """Non-value states a key can be in at a point in time."""

    TOMBSTONE = "tombstone"
    UNBORN = "unborn"

    def __repr__(self) -> str:
        return f"<{self.value}>"


TOMBSTONE = Absent.TOMBSTONE
UNBORN = Absent.UNBORN

# bytes for a live value, otherwise TOMBSTONE / UNBORN
Value = Union[bytes, Absent]


class EventKind(enum.Enum):
    WRITE = "W"
    DELETE = "D"


_FORBIDDEN = ("/", "\n", "\x00")


@dataclass(frozen=True, order=True)
class KeyId:
    """A configuration key: a store tag plus a hierarchical path."""

    tag: str
    path: tuple[str, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.path, tuple):
            object.__setattr__(self, "path", tuple(self.path))
        if not self.tag:
            raise StoreError("key tag must be non-empty")
        if any(c in self.tag for c in (*_FORBIDDEN, ":", "\t")):
            raise StoreError(f"key tag {self.tag!r} contains a forbidden character")
        if not self.path or not "/".join(self.path):
            raise StoreError("key path must be non-empty")
        for seg in self.path:
            if any(c in seg for c in _FORBIDDEN):
                raise StoreError(f"key path segment {seg!r} contains a forbidden character")

    @classmethod
    def of(cls, tag: str, path: str) -> KeyId:
        return cls(tag, tuple(path.split("/")))

    @classmethod
    def parse(cls, text: str) -> KeyId:
        """Parse the ``tag:a/b/c`` rendering."""
        tag, sep, path = text.partition(":")
        if not sep:
            raise StoreError(f"key {text!r} is not of the form tag:path")
        return cls.of(tag, path)

    @property
    def path_str(self) -> str:
        return "/".join(self.path)

    def __str__(self) -> str:
        return f"{self.tag}:{self.path_str}"


@dataclass(frozen=True)
class KeyEvent:
    key: KeyId
    timestamp: int  # nanoseconds since epoch
    kind: EventKind
    value: bytes | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.key, KeyId):
            raise StoreError("key: expected a KeyId")
        if not isinstance(self.timestamp, int) or isinstance(self.timestamp, bool):
            raise StoreError("timestamp: expected integer nanoseconds")
        if self.timestamp < 0:
            raise StoreError("timestamp: must be non-negative")
        if self.kind is EventKind.WRITE and not isinstance(self.value, bytes):
            raise StoreError("value: a Write event requires a byte-string value")
        if self.kind is EventKind.DELETE and self.value is not None:
            raise StoreError("value: a Delete event must not carry a value")

    @classmethod
    def write(cls, key: KeyId, timestamp: int, value: bytes | str) -> KeyEvent:
        if isinstance(value, str):
            value = value.encode()
        return cls(key, timestamp, EventKind.WRITE, value)

    @classmethod
    def delete(cls, key: KeyId, timestamp: int) -> KeyEvent:
        return cls(key, timestamp, EventKind.DELETE, None)

    @property
    def state(self) -> Value:
        return self.value if self.kind is EventKind.WRITE else TOMBSTONE


class Version(NamedTuple):
    timestamp: int
    seq: int
    value: Value  # bytes or TOMBSTONE


@dataclass
class KeyHistory:
    key: KeyId
    write_count: int = 0
    delete_count: int = 0
    versions: list[Version] = field(default_factory=list)

    def _insert(self, version: Version) -> None:
        # seq is monotone, so (timestamp, seq) never collides
        bisect.insort(self.versions, version, key=lambda v: (v.timestamp, v.seq))
        if version.value is TOMBSTONE:
            self.delete_count += 1
        else:
            self.write_count += 1

    def value_at(self, t: int) -> Value:
        i = bisect.bisect_right(self.versions, t, key=lambda v: v.timestamp)
        if i == 0:
            return UNBORN
        return self.versions[i - 1].value


class _Entry(NamedTuple):
    timestamp: int
    seq: int
    event: KeyEvent


class Store:
    """In-memory TTKV. Persist with :func:`save` / :func:`load`."""

    def __init__(self) -> None:
        self._histories: dict[KeyId, KeyHistory] = {}
        self._entries: list[_Entry] = []  # sorted by (timestamp, seq)
        self._log: list[KeyEvent] = []  # ingest order
        self.next_seq = 0

    def record(self, event: KeyEvent) -> int:
        """Append one event; returns its ingest sequence number."""
        if not isinstance(event, KeyEvent):
            raise StoreError("expected a KeyEvent")
        seq = self.next_seq
        self.next_seq += 1
        hist = self._histories.get(event.key)
        if hist is None:
            hist = self._histories[event.key] = KeyHistory(event.key)
        hist._insert(Version(event.timestamp, seq, event.state))
        entry = _Entry(event.timestamp, seq, event)
        if not self._entries or self._entries[-1][:2] < entry[:2]:
            self._entries.append(entry)
        else:
            bisect.insort(self._entries, entry, key=lambda e: (e.timestamp, e.seq))
        self._log.append(event)
        return seq

    def record_all(self, events: Iterable[KeyEvent]) -> int:
        n = 0
        for ev in events:
            self.record(ev)
            n += 1
        return n

    def history(self, key: KeyId) -> KeyHistory | None:
        return self._histories.get(key)

    def keys(self) -> list[KeyId]:
        return sorted(self._histories)

    def tags(self) -> list[str]:
        return sorted({k.tag for k in self._histories})

    def __contains__(self, key: object) -> bool:
        return key in self._histories

    def __len__(self) -> int:
        return len(self._log)

    def __iter__(self) -> Iterator[KeyEvent]:
        """Events in ingest order."""
        return iter(self._log)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Store):
            return NotImplemented
        return (
            self._log == other._log
            and self._histories == other._histories
            and self.next_seq == other.next_seq
        )

    def value_at(self, key: KeyId, t: int) -> Value:
        hist = self._histories.get(key)
        if hist is None:
            return UNBORN
        return hist.value_at(t)

    def value_before(self, key: KeyId, t: int) -> Value:
        """State strictly before instant ``t``."""
        return self.value_at(key, t - 1)

    def events_in(self, t_start: int | None = None, t_end: int | None = None) -> list[KeyEvent]:
        """Events with ``t_start <= timestamp <= t_end`` in (timestamp, ingest) order."""
        if t_start is not None and t_end is not None and t_start > t_end:
            raise StoreError(f"inverted range: start {t_start} > end {t_end}")
        def stamp(e: _Entry) -> int:
            return e.timestamp

        lo = 0 if t_start is None else bisect.bisect_left(self._entries, t_start, key=stamp)
        hi = len(self._entries) if t_end is None else bisect.bisect_right(self._entries, t_end, key=stamp)
        return [e.event for e in self._entries[lo:hi]]

    def first_time(self) -> int | None:
        return self._entries[0].timestamp if self._entries else None

    def last_time(self) -> int | None:
        return self._entries[-1].timestamp if self._entries else None

    def state(self, tag: str, t: int | None = None) -> dict[KeyId, bytes]:
        """Live key/value map for one tag at time ``t`` (default: latest)."""
        out: dict[KeyId, bytes] = {}
        for key in self.keys():
            if key.tag != tag:
                continue
            hist = self._histories[key]
            value = hist.versions[-1].value if t is None else hist.value_at(t)
            if isinstance(value, bytes):
                out[key] = value
        return out


# --- event-log encoding -----------------------------------------------------

_ESCAPES = {"%": "%25", "\t": "%09", "\n": "%0A", "\r": "%0D"}


def _pct_encode(text: str) -> str:
    return "".join(_ESCAPES.get(c, c) for c in text)


def _pct_decode(text: str) -> str:
    if "%" not in text:
        return text
    out = []
    i = 0
    while i < len(text):
        c = text[i]
        if c == "%":
            code = text[i + 1 : i + 3]
            if len(code) != 2:
                raise ValueError(f"truncated escape in {text!r}")
            out.append(chr(int(code, 16)))
            i += 3
        else:
            out.append(c)
            i += 1
    return "".join(out)


def format_timestamp(ns: int) -> str:
    seconds, nanos = divmod(ns, NS_PER_SECOND)
    return f"{seconds}.{nanos:09d}"


def parse_log_timestamp(text: str) -> int:
    seconds, dot, nanos = text.partition(".")
    if not seconds.isdigit() or (dot and (not nanos.isdigit() or len(nanos) > 9)):
        raise ValueError(f"bad timestamp {text!r}")
    return int(seconds) * NS_PER_SECOND + (int(nanos.ljust(9, "0")) if nanos else 0)


def encode_event(event: KeyEvent) -> str:
    payload = "-" if event.value is None else base64.b64encode(event.value).decode("ascii")
    return "\t".join(
        (
            format_timestamp(event.timestamp),
            event.kind.value,
            _pct_encode(event.key.tag),
            _pct_encode(event.key.path_str),
            payload,
        )
    )


def decode_event(line: str, line_no: int = 0) -> KeyEvent:
    fields = line.split("\t")
    if len(fields) != 5:
        raise LogFormatError(line_no, f"expected 5 tab-separated fields, got {len(fields)}")
    ts_text, kind_text, tag_text, path_text, payload = fields
    try:
        ts = parse_log_timestamp(ts_text)
    except ValueError as exc:
        raise LogFormatError(line_no, str(exc)) from None
    try:
        kind = EventKind(kind_text)
    except ValueError:
        raise LogFormatError(line_no, f"unknown event kind {kind_text!r}") from None
    try:
        key = KeyId.of(_pct_decode(tag_text), _pct_decode(path_text))
        if kind is EventKind.WRITE:
            if payload == "-":
                raise StoreError("value: a Write event requires a value")
            value = base64.b64decode(payload.encode("ascii"), validate=True)
            return KeyEvent(key, ts, kind, value)
        if payload != "-":
            raise StoreError("value: a Delete event must not carry a value")
        return KeyEvent(key, ts, kind, None)
    except (StoreError, ValueError, binascii.Error) as exc:
        raise LogFormatError(line_no, str(exc)) from None


def encode_events(events: Iterable[KeyEvent]) -> bytes:
    return "".join(encode_event(ev) + "\n" for ev in events).encode("utf-8")


def iter_log(data: bytes, source: str = "<log>") -> Iterator[KeyEvent]:
    """Decode log bytes. A trailing fragment without a newline is dropped with a warning."""
    lines = data.split(b"\n")
    tail = lines.pop()
    for line_no, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise LogFormatError(line_no, "not valid UTF-8") from None
        yield decode_event(text, line_no)
    if tail:
        logger.warning(
            "%s: dropped incomplete trailing record (%d bytes) at line %d",
            source, len(tail), len(lines) + 1,
        )


def save(store: Store, path: str | os.PathLike) -> None:
    """Write the whole store atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode_events(store))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> Store:
    path = Path(path)
    store = Store()
    if not path.exists():
        return store
    store.record_all(iter_log(path.read_bytes(), str(path)))
    return store


def append_events(path: str | os.PathLike, events: Iterable[KeyEvent]) -> int:
    """Append events to a log file in one write; returns the count written."""
    events = list(events)
    if not events:
        return 0
    data = encode_events(events)
    fd = os.open(path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
    try:
        os.write(fd, data)
        os.fsync(fd)
    finally:
        os.close(fd)
    return len(events)


def recover(path: str | os.PathLike) -> int:
    """Physically truncate an incomplete trailing record; returns bytes removed."""
    path = Path(path)
    if not path.exists():
        return 0
    data = path.read_bytes()
    if not data or data.endswith(b"\n"):
        return 0
    keep = data.rfind(b"\n") + 1
    with open(path, "r+b") as fh:
        fh.truncate(keep)
    logger.warning("%s: truncated %d-byte incomplete record", path, len(data) - keep)
    return len(data) - keep
