"""Flatten config files into key/value maps and diff successive snapshots.

Three formats are understood:

* ``flat``  - ``key=value`` lines; ``#`` comments and blank lines ignored.
* ``ini``   - ``[section]`` headers over the flat grammar; keys become
  ``section/key``. A ``/`` inside a section name nests further.
* ``json``  - nested objects/arrays; array elements are addressed by their
  zero-based index. Leaves are stored as their JSON source text, so
  ``1.50`` stays ``1.50`` and strings keep their quotes.

Serialization is the inverse used to materialize rolled-back files. It is
exact at the key/value level; comments and formatting are not preserved.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .ttkv import EventKind, KeyEvent, KeyId, Store, StoreError, iter_log

logger = logging.getLogger(__name__)


class FormatKind(enum.Enum):
    FLAT = "flat"
    INI = "ini"
    JSON = "json"

    @classmethod
    def parse(cls, text: str) -> FormatKind:
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown format {text!r} (expected flat, ini or json)") from None


class FormatError(ValueError):
    def __init__(self, offset: int, message: str, kind: FormatKind | None = None):
        prefix = f"{kind.value}: " if kind else ""
        super().__init__(f"{prefix}byte {offset}: {message}")
        self.offset = offset
        self.message = message


@dataclass
class FlatSnapshot:
    tag: str
    values: dict[KeyId, bytes] = field(default_factory=dict)
    timestamp: int | None = None


def _decode(data: bytes, kind: FormatKind) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(exc.start, "invalid UTF-8", kind) from None


def _lines(text: str) -> Iterable[tuple[int, str]]:
    """Yield (byte offset, line) pairs."""
    offset = 0
    for line in text.splitlines(keepends=True):
        yield offset, line
        offset += len(line.encode("utf-8"))


def _put(out: dict[KeyId, bytes], key: KeyId, value: bytes, offset: int) -> None:
    if key in out:
        logger.warning("duplicate key %s at byte %d; last occurrence wins", key, offset)
        del out[key]  # keep map order = order of final occurrence
    out[key] = value


def _flatten_lines(text: str, tag: str, kind: FormatKind) -> dict[KeyId, bytes]:
    out: dict[KeyId, bytes] = {}
    section: tuple[str, ...] = ()
    comment_chars = ("#", ";") if kind is FormatKind.INI else ("#",)
    for offset, raw in _lines(text):
        line = raw.strip()
        if not line or line.startswith(comment_chars):
            continue
        if kind is FormatKind.INI and line.startswith("["):
            if not line.endswith("]") or len(line) < 3:
                raise FormatError(offset, f"malformed section header {line!r}", kind)
            name = line[1:-1].strip()
            segments = tuple(s.strip() for s in name.split("/"))
            if not all(segments):
                raise FormatError(offset, f"empty section name segment in {line!r}", kind)
            section = segments
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise FormatError(offset, f"expected key=value, got {line!r}", kind)
        if not key:
            raise FormatError(offset, "empty key", kind)
        if "/" in key or "\x00" in key:
            raise FormatError(offset, f"key {key!r} contains '/' or NUL", kind)
        try:
            kid = KeyId(tag, (*section, key))
        except StoreError as exc:
            raise FormatError(offset, str(exc), kind) from None
        _put(out, kid, value.strip().encode("utf-8"), offset)
    return out


# --- JSON -------------------------------------------------------------------


class _Raw(str):
    """Leaf already rendered as JSON source text."""


_INDEX = re.compile(r"0|[1-9][0-9]*")


def _escape_segment(name: str) -> str:
    out = []
    for c in name:
        if c in "%/\n\t\x00":
            out.append(f"%{ord(c):02X}")
        else:
            out.append(c)
    text = "".join(out)
    if not text:
        return "%"  # empty object key
    if text[0].isdigit() and text.isdigit():
        # keep object keys distinguishable from array indices
        return f"%{ord(text[0]):02X}{text[1:]}"
    return text


def _unescape_segment(seg: str) -> str:
    if seg == "%":
        return ""
    return re.sub(r"%([0-9A-F]{2})", lambda m: chr(int(m.group(1), 16)), seg)


def _flatten_json(text: str, tag: str) -> dict[KeyId, bytes]:
    def pairs_hook(pairs: list[tuple[str, object]]) -> dict[str, object]:
        obj: dict[str, object] = {}
        for k, v in pairs:
            if k in obj:
                logger.warning("duplicate JSON key %r; last occurrence wins", k)
                del obj[k]
            obj[k] = v
        return obj

    try:
        doc = json.loads(
            text,
            object_pairs_hook=pairs_hook,
            parse_int=_Raw,
            parse_float=_Raw,
            parse_constant=_Raw,
        )
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise FormatError(offset, exc.msg, FormatKind.JSON) from None
    if not isinstance(doc, (dict, list)):
        raise FormatError(0, "top-level value must be an object or array", FormatKind.JSON)

    out: dict[KeyId, bytes] = {}

    def walk(node: object, path: tuple[str, ...]) -> None:
        if isinstance(node, dict) and node:
            for k, v in node.items():
                walk(v, (*path, _escape_segment(k)))
        elif isinstance(node, list) and node:
            for i, v in enumerate(node):
                walk(v, (*path, str(i)))
        elif path:
            out[KeyId(tag, path)] = _render_leaf(node).encode("utf-8")

    walk(doc, ())
    return out


def _render_leaf(node: object) -> str:
    if isinstance(node, _Raw):
        return str(node)
    if node is True:
        return "true"
    if node is False:
        return "false"
    if node is None:
        return "null"
    if isinstance(node, str):
        return json.dumps(node, ensure_ascii=False)
    if isinstance(node, dict):
        return "{}"
    if isinstance(node, list):
        return "[]"
    raise TypeError(f"unexpected JSON node {node!r}")


def _serialize_json(values: Mapping[KeyId, bytes]) -> bytes:
    root: dict = {}
    for key, value in values.items():
        node = root
        for seg in key.path[:-1]:
            child = node.setdefault(seg, {})
            if not isinstance(child, dict):
                raise ValueError(f"{key}: leaf and container share a path")
            node = child
        if isinstance(node.get(key.path[-1]), dict):
            raise ValueError(f"{key}: leaf and container share a path")
        node[key.path[-1]] = value.decode("utf-8")

    def dump(node: dict | str, depth: int) -> str:
        if isinstance(node, str):
            return node
        pad = "  " * (depth + 1)
        if node and all(_INDEX.fullmatch(s) for s in node):
            items = [dump(node[s], depth + 1) for s in sorted(node, key=int)]
            body = ",\n".join(pad + item for item in items)
            return "[\n" + body + "\n" + "  " * depth + "]"
        body = ",\n".join(
            pad + json.dumps(_unescape_segment(s), ensure_ascii=False) + ": " + dump(v, depth + 1)
            for s, v in node.items()
        )
        return "{\n" + body + "\n" + "  " * depth + "}"

    if not root:
        return b"{}\n"
    return (dump(root, 0) + "\n").encode("utf-8")


# --- public surface ---------------------------------------------------------


def flatten(data: bytes, kind: FormatKind, tag: str, timestamp: int | None = None) -> FlatSnapshot:
    """Parse config bytes into a flat snapshot.

    Raises :class:`FormatError` carrying the byte offset of the problem.
    """
    text = _decode(data, kind)
    if kind is FormatKind.JSON:
        values = _flatten_json(text, tag)
    else:
        values = _flatten_lines(text, tag, kind)
    return FlatSnapshot(tag, values, timestamp)


def read_snapshot(path: str | Path, kind: FormatKind, tag: str, timestamp: int | None = None) -> FlatSnapshot:
    return flatten(Path(path).read_bytes(), kind, tag, timestamp)


def serialize(values: Mapping[KeyId, bytes], kind: FormatKind) -> bytes:
    """Render a flat map back into file bytes for ``kind``."""
    if kind is FormatKind.JSON:
        return _serialize_json(values)

    def check(key: KeyId, value: bytes) -> str:
        text = value.decode("utf-8")
        if "\n" in text or "\r" in text:
            raise ValueError(f"{key}: value contains a line break")
        return text

    lines: list[str] = []
    if kind is FormatKind.FLAT:
        for key, value in values.items():
            if len(key.path) != 1:
                raise ValueError(f"{key}: flat files hold single-segment keys only")
            lines.append(f"{key.path[0]}={check(key, value)}")
        return "".join(line + "\n" for line in lines).encode("utf-8")

    sections: dict[tuple[str, ...], list[str]] = {}
    for key, value in values.items():
        sections.setdefault(key.path[:-1], []).append(f"{key.path[-1]}={check(key, value)}")
    out: list[str] = sections.pop((), [])
    for name, entries in sections.items():
        if out:
            out.append("")
        out.append("[" + "/".join(name) + "]")
        out.extend(entries)
    return "".join(line + "\n" for line in out).encode("utf-8")


def diff(before: FlatSnapshot, after: FlatSnapshot, t: int) -> list[KeyEvent]:
    """Events turning ``before`` into ``after``, all stamped ``t``, in key order."""
    if before.tag != after.tag:
        raise ValueError(f"cannot diff snapshots of different stores: {before.tag!r} vs {after.tag!r}")
    events = []
    for key in sorted(before.values.keys() | after.values.keys()):
        old = before.values.get(key)
        new = after.values.get(key)
        if new is None:
            events.append(KeyEvent.delete(key, t))
        elif old != new:
            events.append(KeyEvent.write(key, t, new))
    return events


def apply_events(values: Mapping[KeyId, bytes], events: Iterable[KeyEvent]) -> dict[KeyId, bytes]:
    out = dict(values)
    for ev in events:
        if ev.kind is EventKind.WRITE:
            out[ev.key] = ev.value
        else:
            out.pop(ev.key, None)
    return out


def ingest_trace(source: str | Path | bytes, store: Store) -> int:
    """Append every event of an event-log file to ``store``; returns the count.

    The whole file is decoded before anything is recorded, so a bad line
    leaves the store untouched.
    """
    if isinstance(source, bytes):
        data, name = source, "<trace>"
    else:
        data, name = Path(source).read_bytes(), str(source)
    events = list(iter_log(data, name))
    return store.record_all(events)
