"""Co-modification clustering of configuration keys.

Writes are grouped into write sets by gap-based sessionization, pairwise
correlation is computed from write-set membership, and keys are merged by
complete-linkage agglomerative clustering until the closest pair of
clusters is farther apart than the threshold.

All correlation and distance arithmetic is exact (:class:`fractions.Fraction`)
so that merge tie-breaking is reproducible.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

from .ttkv import NS_PER_SECOND, KeyEvent, KeyId, format_timestamp

DEFAULT_WINDOW_NS = NS_PER_SECOND
DEFAULT_THRESHOLD = Fraction(1, 2)

INFINITE = math.inf
Distance = Union[Fraction, float]  # float only for INFINITE


class ClusteringError(ValueError):
    pass


@dataclass(frozen=True)
class WindowConfig:
    window_ns: int = DEFAULT_WINDOW_NS

    def __post_init__(self) -> None:
        if self.window_ns <= 0:
            raise ClusteringError("window must be positive")

    @classmethod
    def seconds(cls, value: float | str | Fraction) -> WindowConfig:
        return cls(int(as_fraction(value) * NS_PER_SECOND))


@dataclass(frozen=True)
class WriteSet:
    index: int
    start: int
    end: int
    keys: frozenset[KeyId]
    event_count: int = 0


def as_fraction(value: float | int | str | Fraction) -> Fraction:
    """Exact rational from user input; floats go through their shortest repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        if math.isinf(value):
            raise ClusteringError("expected a finite number")
        return Fraction(repr(value))
    return Fraction(value)


def build_write_sets(events: Sequence[KeyEvent], cfg: WindowConfig = WindowConfig()) -> list[WriteSet]:
    """Group chronologically ordered events into write sets.

    An event joins the current set when it is at most ``cfg.window_ns``
    after the set's latest event; otherwise it starts a new set. Deletes
    count as modifications.
    """
    sets: list[WriteSet] = []
    keys: dict[KeyId, None] = {}
    start = last = None
    count = 0
    for ev in events:
        if last is not None and ev.timestamp < last:
            raise ClusteringError(
                f"events out of order: {format_timestamp(ev.timestamp)} after {format_timestamp(last)}"
            )
        if last is not None and ev.timestamp - last > cfg.window_ns:
            sets.append(WriteSet(len(sets), start, last, frozenset(keys), count))
            keys, start, count = {}, None, 0
        if start is None:
            start = ev.timestamp
        keys[ev.key] = None
        last = ev.timestamp
        count += 1
    if keys:
        sets.append(WriteSet(len(sets), start, last, frozenset(keys), count))
    return sets


class CorrelationMatrix:
    """Occurrence and co-occurrence counts over write-set membership."""

    def __init__(self, sets: Iterable[WriteSet]):
        self.occurrences: dict[KeyId, int] = defaultdict(int)
        self.co: dict[tuple[KeyId, KeyId], int] = defaultdict(int)
        for ws in sets:
            members = sorted(ws.keys)
            for i, a in enumerate(members):
                self.occurrences[a] += 1
                for b in members[i + 1 :]:
                    self.co[(a, b)] += 1
        self.occurrences = dict(self.occurrences)
        self.co = dict(self.co)

    @property
    def keys(self) -> list[KeyId]:
        return sorted(self.occurrences)

    def together(self, a: KeyId, b: KeyId) -> int:
        if a == b:
            return self.occurrences.get(a, 0)
        return self.co.get((a, b) if a < b else (b, a), 0)

    def correlation(self, a: KeyId, b: KeyId) -> Fraction | None:
        """|A∩B|/|A| + |A∩B|/|B|, or None when either key never occurs."""
        na = self.occurrences.get(a, 0)
        nb = self.occurrences.get(b, 0)
        if not na or not nb:
            return None
        both = self.together(a, b)
        return Fraction(both, na) + Fraction(both, nb)

    def distance(self, a: KeyId, b: KeyId) -> Distance | None:
        corr = self.correlation(a, b)
        if corr is None:
            return None
        return distance_from_correlation(corr)

    def neighbours(self) -> dict[KeyId, dict[KeyId, Fraction]]:
        """Finite distances only; pairs that never co-occur are absent."""
        out: dict[KeyId, dict[KeyId, Fraction]] = {k: {} for k in self.occurrences}
        for (a, b), both in self.co.items():
            d = 1 / (Fraction(both, self.occurrences[a]) + Fraction(both, self.occurrences[b]))
            out[a][b] = d
            out[b][a] = d
        return out


def correlation(a: KeyId, b: KeyId, sets: Iterable[WriteSet]) -> Fraction | None:
    return CorrelationMatrix(sets).correlation(a, b)


def distance_from_correlation(corr: Fraction | float | int) -> Distance:
    corr = as_fraction(corr)
    if corr == 0:
        return INFINITE
    return 1 / corr


def distance(a: KeyId, b: KeyId, sets: Iterable[WriteSet]) -> Distance | None:
    return CorrelationMatrix(sets).distance(a, b)


@dataclass(frozen=True)
class Merge:
    step: int
    left: KeyId  # identifier of the first cluster (smaller id)
    right: KeyId
    distance: Fraction
    size: int


@dataclass
class Cluster:
    keys: tuple[KeyId, ...]  # sorted
    modification_count: int = 0
    event_count: int = 0
    max_distance: Fraction | None = None  # None for singletons

    @property
    def id(self) -> KeyId:
        return self.keys[0]

    def __len__(self) -> int:
        return len(self.keys)

    def __contains__(self, key: object) -> bool:
        return key in self.keys


@dataclass
class ClusteringResult:
    clusters: list[Cluster]
    merges: list[Merge] = field(default_factory=list)
    threshold: Distance = DEFAULT_THRESHOLD

    def cluster_of(self, key: KeyId) -> Cluster | None:
        for c in self.clusters:
            if key in c.keys:
                return c
        return None

    def by_id(self, ident: KeyId) -> Cluster | None:
        for c in self.clusters:
            if c.id == ident:
                return c
        return None

    def partition(self) -> list[frozenset[KeyId]]:
        return [frozenset(c.keys) for c in self.clusters]


def agglomerate(
    keys: Iterable[KeyId],
    neighbours: Mapping[KeyId, Mapping[KeyId, Fraction]],
    threshold: Distance,
) -> tuple[list[tuple[KeyId, ...]], list[Merge]]:
    """Complete-linkage merging over a sparse distance graph.

    Missing pairs are infinitely far apart. Under complete linkage the
    distance from a merged cluster to a third is the max of its parts, so a
    merged cluster's finite neighbours are the intersection of its parts'.
    Ties on distance go to the lexicographically smallest identifier pair.
    """
    members: dict[KeyId, tuple[KeyId, ...]] = {k: (k,) for k in sorted(keys)}
    dist: dict[KeyId, dict[KeyId, Fraction]] = {
        k: {n: d for n, d in neighbours.get(k, {}).items() if n in members and n != k} for k in members
    }
    merges: list[Merge] = []
    while True:
        best = None
        for a, row in dist.items():
            for b, d in row.items():
                if a < b and (best is None or (d, a, b) < best):
                    best = (d, a, b)
        if best is None or best[0] > threshold:
            break
        d, a, b = best
        row_a, row_b = dist.pop(a), dist.pop(b)
        merged_row = {c: max(row_a[c], row_b[c]) for c in row_a.keys() & row_b.keys() if c not in (a, b)}
        for c in row_a.keys() | row_b.keys():
            if c in dist:
                dist[c].pop(a, None)
                dist[c].pop(b, None)
        new_members = tuple(sorted(members.pop(a) + members.pop(b)))
        new_id = new_members[0]
        for c, dc in merged_row.items():
            dist[c][new_id] = dc
        dist[new_id] = merged_row
        members[new_id] = new_members
        merges.append(Merge(len(merges), a, b, d, len(new_members)))
    return sorted(members.values()), merges


def cluster(
    sets: Sequence[WriteSet],
    threshold: Distance | float | str = DEFAULT_THRESHOLD,
    keys: Iterable[KeyId] | None = None,
) -> ClusteringResult:
    """Cluster every key that occurs in ``sets``.

    ``threshold`` is the largest complete-linkage distance at which two
    clusters may still merge; ``math.inf`` runs the full dendrogram.
    """
    if not (isinstance(threshold, float) and math.isinf(threshold)):
        threshold = as_fraction(threshold)
    if threshold <= 0:
        raise ClusteringError("threshold must be positive")
    matrix = CorrelationMatrix(sets)
    universe = matrix.keys
    if keys is not None:
        wanted = set(keys)
        missing = wanted - set(universe)
        if missing:
            raise ClusteringError(f"keys never modified in the write sets: {sorted(map(str, missing))}")
        universe = sorted(wanted)
    groups, merges = agglomerate(universe, matrix.neighbours(), threshold)
    clusters = [_describe(g, sets, matrix) for g in groups]
    return ClusteringResult(clusters, merges, threshold)


def _describe(keys: tuple[KeyId, ...], sets: Sequence[WriteSet], matrix: CorrelationMatrix) -> Cluster:
    member = set(keys)
    touching = [ws for ws in sets if not member.isdisjoint(ws.keys)]
    max_d = None
    if len(keys) > 1:
        max_d = max(matrix.distance(a, b) for i, a in enumerate(keys) for b in keys[i + 1 :])
    return Cluster(keys, len(touching), 0, max_d)


def cluster_stats(c: Cluster | Iterable[KeyId], sets: Iterable[WriteSet]) -> int:
    """Number of write sets touching at least one member of ``c``."""
    member = set(c.keys if isinstance(c, Cluster) else c)
    return sum(1 for ws in sets if not member.isdisjoint(ws.keys))


def count_raw_events(result: ClusteringResult, events: Iterable[KeyEvent]) -> None:
    """Fill each cluster's raw event count in place."""
    owner = {k: c for c in result.clusters for k in c.keys}
    for c in result.clusters:
        c.event_count = 0
    for ev in events:
        c = owner.get(ev.key)
        if c is not None:
            c.event_count += 1


def cluster_events(
    events: Sequence[KeyEvent],
    window: WindowConfig = WindowConfig(),
    threshold: Distance | float | str = DEFAULT_THRESHOLD,
) -> tuple[ClusteringResult, list[WriteSet]]:
    """Sessionize then cluster; the usual end-to-end entry point."""
    sets = build_write_sets(events, window)
    result = cluster(sets, threshold)
    count_raw_events(result, events)
    return result, sets


def singleton_clusters(sets: Sequence[WriteSet]) -> ClusteringResult:
    """One cluster per modified key (the no-clustering baseline)."""
    counts: dict[KeyId, int] = defaultdict(int)
    for ws in sets:
        for k in ws.keys:
            counts[k] += 1
    clusters = [Cluster((k,), counts[k]) for k in sorted(counts)]
    return ClusteringResult(clusters, [], Fraction(0))


def _fmt_distance(d: Distance | None) -> str:
    if d is None:
        return "-"
    if isinstance(d, float):
        return "inf"
    text = f"{float(d):.6g}"
    return text if d.denominator == 1 or Fraction(text) == d else f"{text} ({d})"


def render_report(result: ClusteringResult) -> str:
    """Plain-text cluster report followed by the merge dendrogram."""
    out = [f"# clusters: {len(result.clusters)}  threshold: {_fmt_distance(result.threshold)}"]
    for c in result.clusters:
        out.append("")
        out.append(f"cluster {c.id}")
        out.append(f"  modifications: {c.modification_count}")
        out.append(f"  raw_events: {c.event_count}")
        out.append(f"  max_distance: {_fmt_distance(c.max_distance)}")
        out.append(f"  size: {len(c)}")
        out.append("  keys:")
        out.extend(f"    {k}" for k in c.keys)
    out.append("")
    out.append("# dendrogram")
    for m in result.merges:
        out.append(f"merge {m.step}\t{m.left}\t{m.right}\t{_fmt_distance(m.distance)}\tsize={m.size}")
    return "\n".join(out) + "\n"
