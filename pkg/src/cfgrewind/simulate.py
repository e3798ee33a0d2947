"""Synthetic traces with planted key clusters, error injection and scoring.

A scenario plants ground-truth clusters whose members are always written
together in a short burst, independent keys written alone, and optional
"software update" noise that rewrites whole bundles of unrelated keys at
the same instant. Errors are injected as an extra write (or delete) of the
offending keys some days before the end of the trace.

Every random stream is seeded from ``(seed, component)`` so components are
independent of one another. Noise is drawn in unit-rate bands, which makes
the noise of a lower rate an exact subset of the noise of a higher rate.
"""

from __future__ import annotations

import bisect
import json
import math
import random
import sys
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .clustering import (
    DEFAULT_THRESHOLD,
    WindowConfig,
    cluster_events,
    singleton_clusters,
)
from .ingest import FormatKind, flatten
from .repair import Outcome, SearchConfig, SearchResult, Strategy, Target, Trial, env_var_for, plan, search
from .ttkv import NS_PER_SECOND, KeyEvent, KeyId, Store, encode_events

DAY_NS = 86_400 * NS_PER_SECOND
EPOCH_NS = 1_700_000_000 * NS_PER_SECOND  # scenario time zero
BURST_NS = NS_PER_SECOND // 10
ORACLE = Path(__file__).with_name("_oracle.py")


class ScenarioError(ValueError):
    pass


@dataclass
class PlantedCluster:
    keys: tuple[str, ...]
    rate: float  # co-modifications per day
    solo_rate: float = 0.0  # per key, per day


@dataclass
class ErrorSpec:
    keys: tuple[str, ...]
    mode: str = "write"  # write | delete
    value: str = "BAD"
    offset_days: float = 14.0
    spurious: int = 0


@dataclass
class ScenarioSpec:
    seed: int
    duration_days: float
    clusters: list[PlantedCluster] = field(default_factory=list)
    independent: dict[str, float] = field(default_factory=dict)
    noise_rate: float = 0.0  # update events per day
    noise_bundles: list[tuple[str, ...]] | None = None
    error: ErrorSpec | None = None
    tag: str = "app"
    min_gap_s: float = 2.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.duration_days <= 0:
            raise ScenarioError("duration_days must be positive")
        seen: set[str] = set()
        for c in self.clusters:
            if not c.keys:
                raise ScenarioError("empty planted cluster")
            if c.rate < 0 or c.solo_rate < 0:
                raise ScenarioError(f"negative rate in cluster {c.keys}")
            for k in c.keys:
                if k in seen:
                    raise ScenarioError(f"key {k!r} appears in more than one cluster")
                seen.add(k)
        for k, rate in self.independent.items():
            if k in seen:
                raise ScenarioError(f"independent key {k!r} is also a cluster member")
            if rate < 0:
                raise ScenarioError(f"negative rate for {k!r}")
            seen.add(k)
        for k in seen:
            KeyId(self.tag, (k,))
            if any(c in k for c in "=#\t ") or k != k.strip():
                raise ScenarioError(f"key {k!r} is not a valid flat-file key")
        if self.noise_rate < 0:
            raise ScenarioError("negative noise rate")
        for bundle in self.noise_bundles or ():
            unknown = set(bundle) - seen
            if unknown:
                raise ScenarioError(f"noise bundle names unknown keys {sorted(unknown)}")
        if self.error is not None:
            if not 0 < self.error.offset_days < self.duration_days:
                raise ScenarioError("error offset must lie inside the trace")
            if self.error.mode not in ("write", "delete"):
                raise ScenarioError(f"unknown error mode {self.error.mode!r}")
            if self.error.spurious < 0:
                raise ScenarioError("negative spurious-write count")

    def units(self) -> list[tuple[str, ...]]:
        """Ground-truth groups: planted clusters, then independent keys."""
        return [tuple(c.keys) for c in self.clusters] + [(k,) for k in self.independent]

    def bundles(self) -> list[tuple[str, ...]]:
        if self.noise_bundles is not None:
            return [tuple(b) for b in self.noise_bundles]
        units = self.units()
        return [units[i] + units[i + 1] for i in range(0, len(units) - 1, 2)]

    def key(self, name: str) -> KeyId:
        return KeyId(self.tag, (name,))

    @property
    def end_ns(self) -> int:
        return EPOCH_NS + round(self.duration_days * DAY_NS)


# --- spec file ---------------------------------------------------------------


def _keys(text: str) -> tuple[str, ...]:
    return tuple(k.strip() for k in text.split(",") if k.strip())


def parse_spec(data: bytes | str) -> ScenarioSpec:
    """Read a scenario from flat ``key=value`` text.

    Recognised keys: ``seed``, ``duration_days``, ``tag``, ``min_gap_s``,
    ``cluster.N.keys|rate|solo_rate``, ``independent.<key>`` (rate),
    ``noise.rate``, ``noise.bundle.N``, ``error.keys|cluster|mode|value|
    offset_days|spurious``.
    """
    if isinstance(data, str):
        data = data.encode("utf-8")
    flat = {k.path[0]: v.decode("utf-8") for k, v in flatten(data, FormatKind.FLAT, "spec").values.items()}
    try:
        clusters: dict[int, dict[str, str]] = {}
        bundles: dict[int, tuple[str, ...]] = {}
        independent: dict[str, float] = {}
        error: dict[str, str] = {}
        top: dict[str, str] = {}
        for name, value in flat.items():
            head, _, rest = name.partition(".")
            if head == "cluster":
                idx, _, attr = rest.partition(".")
                clusters.setdefault(int(idx), {})[attr] = value
            elif head == "independent":
                independent[rest] = float(value)
            elif head == "noise" and rest == "rate":
                top["noise_rate"] = value
            elif head == "noise" and rest.startswith("bundle."):
                bundles[int(rest.split(".", 1)[1])] = _keys(value)
            elif head == "error":
                error[rest] = value
            elif name in ("seed", "duration_days", "tag", "min_gap_s"):
                top[name] = value
            else:
                raise ScenarioError(f"unknown scenario key {name!r}")
        planted = []
        for idx in sorted(clusters):
            attrs = clusters[idx]
            planted.append(
                PlantedCluster(_keys(attrs["keys"]), float(attrs.get("rate", 0)), float(attrs.get("solo_rate", 0)))
            )
        err = None
        if error:
            if "keys" in error:
                keys = _keys(error["keys"])
            elif "cluster" in error:
                keys = planted[int(error["cluster"])].keys
            else:
                raise ScenarioError("error needs error.keys or error.cluster")
            err = ErrorSpec(
                keys,
                error.get("mode", "write"),
                error.get("value", "BAD"),
                float(error.get("offset_days", 14)),
                int(error.get("spurious", 0)),
            )
        return ScenarioSpec(
            seed=int(top.get("seed", 0)),
            duration_days=float(top.get("duration_days", 30)),
            clusters=planted,
            independent=independent,
            noise_rate=float(top.get("noise_rate", 0)),
            noise_bundles=[bundles[i] for i in sorted(bundles)] if bundles else None,
            error=err,
            tag=top.get("tag", "app"),
            min_gap_s=float(top.get("min_gap_s", 2.0)),
        )
    except (KeyError, IndexError) as exc:
        raise ScenarioError(f"incomplete scenario entry: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from None


def format_spec(spec: ScenarioSpec) -> str:
    lines = [f"seed={spec.seed}", f"duration_days={spec.duration_days!r}", f"tag={spec.tag}"]
    lines.append(f"min_gap_s={spec.min_gap_s!r}")
    for i, c in enumerate(spec.clusters):
        lines += [f"cluster.{i}.keys={','.join(c.keys)}", f"cluster.{i}.rate={c.rate!r}",
                  f"cluster.{i}.solo_rate={c.solo_rate!r}"]
    lines += [f"independent.{k}={r!r}" for k, r in spec.independent.items()]
    lines.append(f"noise.rate={spec.noise_rate!r}")
    for i, b in enumerate(spec.noise_bundles or ()):
        lines.append(f"noise.bundle.{i}={','.join(b)}")
    if spec.error:
        e = spec.error
        lines += [f"error.keys={','.join(e.keys)}", f"error.mode={e.mode}", f"error.value={e.value}",
                  f"error.offset_days={e.offset_days!r}", f"error.spurious={e.spurious}"]
    return "\n".join(lines) + "\n"


# --- generation --------------------------------------------------------------


def _rng(spec: ScenarioSpec, *parts: object) -> random.Random:
    return random.Random("/".join(map(str, (spec.seed, *parts))))


def _arrivals(rng: random.Random, rate_per_day: float, duration_ns: int) -> list[int]:
    if rate_per_day <= 0:
        return []
    out = []
    t = 0.0
    while True:
        t += rng.expovariate(rate_per_day)
        ns = round(t * DAY_NS)
        if ns >= duration_ns:
            return out
        out.append(ns)


@dataclass
class _Burst:
    t: int
    writes: list[tuple[int, str]]  # (offset from t, key)

    @property
    def end(self) -> int:
        return self.t + max(off for off, _ in self.writes)


def _separate(bursts: list[_Burst], gap: int) -> None:
    """Shift bursts later so consecutive bursts are more than ``gap`` apart."""
    bursts.sort(key=lambda b: (b.t, b.writes))
    prev_end = None
    for b in bursts:
        if prev_end is not None and b.t - prev_end <= gap:
            b.t = prev_end + gap + 1
        prev_end = b.end


def generate(spec: ScenarioSpec) -> list[KeyEvent]:
    """Seed-deterministic event stream for ``spec``, in timestamp order."""
    duration = spec.end_ns - EPOCH_NS
    gap = round(spec.min_gap_s * NS_PER_SECOND)
    bursts: list[_Burst] = []
    for i, c in enumerate(spec.clusters):
        rng = _rng(spec, "cluster", i)
        for t in _arrivals(rng, c.rate, duration):
            offsets = sorted(rng.randrange(BURST_NS) for _ in c.keys)
            order = list(c.keys)
            rng.shuffle(order)
            bursts.append(_Burst(t, list(zip(offsets, order))))
        for k in c.keys:
            for t in _arrivals(_rng(spec, "solo", k), c.solo_rate, duration):
                bursts.append(_Burst(t, [(0, k)]))
    for k, rate in spec.independent.items():
        for t in _arrivals(_rng(spec, "independent", k), rate, duration):
            bursts.append(_Burst(t, [(0, k)]))
    _separate(bursts, gap)

    noise = _noise_bursts(spec, duration)
    if noise:
        spans = sorted((b.t, b.end) for b in bursts)
        starts = [s for s, _ in spans]
        for nb in noise:
            # keep update events clear of user bursts so they never share a write set
            while True:
                i = bisect.bisect_right(starts, nb.t + gap)
                clash = [e for s, e in spans[max(0, i - 2): i] if s - gap <= nb.t <= e + gap]
                if not clash:
                    break
                nb.t = max(clash) + gap + 1
        bursts.extend(noise)

    raw = []
    for b in bursts:
        for off, k in b.writes:
            raw.append((b.t + off, k))
    raw.sort()
    counters: dict[str, int] = {}
    events = []
    for t, k in raw:
        n = counters[k] = counters.get(k, 0) + 1
        events.append(KeyEvent.write(spec.key(k), EPOCH_NS + t, f"v{n}".encode()))
    return events


def _noise_bursts(spec: ScenarioSpec, duration: int) -> list[_Burst]:
    bundles = spec.bundles()
    if spec.noise_rate <= 0 or not bundles:
        return []
    out = []
    for band in range(math.ceil(spec.noise_rate)):
        rng = _rng(spec, "noise", band)
        for t in _arrivals(rng, 1.0, duration):
            height = band + rng.random()
            choice = rng.randrange(len(bundles))
            if height < spec.noise_rate:
                out.append(_Burst(t, [(0, k) for k in bundles[choice]]))
    return out


def ground_truth(spec: ScenarioSpec, events: Iterable[KeyEvent] | None = None) -> list[frozenset[KeyId]]:
    """Planted partition, restricted to keys that occur in ``events`` if given."""
    present = None if events is None else {ev.key for ev in events}
    out = []
    for unit in spec.units():
        keys = frozenset(spec.key(k) for k in unit)
        if present is not None:
            keys = keys & present
        if keys:
            out.append(keys)
    return out


# --- error injection -----------------------------------------------------------


@dataclass
class AnswerKey:
    keys: tuple[KeyId, ...]
    fix: dict[KeyId, bytes | None]  # None: key must be absent
    error_time: int
    fix_time: int
    mode: str
    spurious_times: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        tag = self.keys[0].tag
        return json.dumps(
            {
                "env": env_var_for(tag),
                "expect": {k.path_str: (v.decode("utf-8") if v is not None else None) for k, v in self.fix.items()},
            },
            sort_keys=True,
        )


def inject_error(events: Sequence[KeyEvent], spec: ScenarioSpec) -> tuple[list[KeyEvent], AnswerKey]:
    """Insert the scenario's erroneous write(s) and any spurious writes after it."""
    err = spec.error
    if err is None:
        raise ScenarioError("scenario has no error spec")
    keys = tuple(spec.key(k) for k in err.keys)
    present = {ev.key for ev in events}
    absent = [str(k) for k in keys if k not in present]
    if absent:
        raise ScenarioError(
            f"offending setting(s) {absent} are never modified in the trace; "
            "an error can only be injected into keys with recorded history"
        )
    gap = round(spec.min_gap_s * NS_PER_SECOND)
    stamps = sorted(ev.timestamp for ev in events)

    def clear(t: int) -> int:
        while True:
            i = bisect.bisect_left(stamps, t - gap)
            if i < len(stamps) and stamps[i] <= t + gap:
                t = stamps[i] + gap + 1
                continue
            return t

    t_err = clear(spec.end_ns - round(err.offset_days * DAY_NS))
    store = Store()
    store.record_all(events)
    fix: dict[KeyId, bytes | None] = {}
    for k in keys:
        v = store.value_at(k, t_err - 1)
        fix[k] = v if isinstance(v, bytes) else None

    injected: list[KeyEvent] = []
    if err.mode == "delete":
        if all(v is None for v in fix.values()):
            raise ScenarioError("delete error on keys that are already absent changes nothing")
        injected += [KeyEvent.delete(k, t_err) for k in keys]
    else:
        injected += [KeyEvent.write(k, t_err, f"{err.value}-{k.path_str}") for k in keys]

    spurious_times = []
    span = spec.end_ns - t_err
    for i in range(err.spurious):
        t = clear(t_err + span * (i + 1) // (err.spurious + 1))
        spurious_times.append(t)
        injected += [KeyEvent.write(k, t, f"{err.value}-{k.path_str}-retry{i + 1}") for k in keys]

    merged = sorted(list(events) + injected, key=lambda ev: (ev.timestamp, ev.key))
    return merged, AnswerKey(keys, fix, t_err, t_err - 1, err.mode, spurious_times)


# --- scoring -----------------------------------------------------------------


@dataclass
class AccuracyReport:
    total: int  # found clusters with more than one key
    correct: int
    oversized: int
    undersized: int
    other: int

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.total if self.total else None


def score_clusters(found: Iterable[Iterable[KeyId]], truth: Iterable[Iterable[KeyId]]) -> AccuracyReport:
    """Exact-match scoring of a found partition against the planted one.

    A found multi-key cluster is correct iff it equals a planted cluster,
    oversized iff it strictly contains one or more planted clusters, and
    undersized iff it is a strict subset of one. Found singletons split off
    a multi-key planted cluster also count as undersized.
    """
    found = [frozenset(c) for c in found]
    truth = [frozenset(c) for c in truth]
    uf = frozenset().union(*found) if found else frozenset()
    ut = frozenset().union(*truth) if truth else frozenset()
    if uf != ut:
        raise ScenarioError(
            f"partitions cover different keys ({len(uf - ut)} only found, {len(ut - uf)} only planted)"
        )
    truth_set = set(truth)
    total = correct = over = under = other = 0
    for c in found:
        multi = len(c) > 1
        total += multi
        if c in truth_set:
            correct += multi
        elif any(t < c for t in truth):
            over += 1
        elif any(c < t for t in truth):
            under += 1
        elif multi:
            other += 1
    return AccuracyReport(total, correct, over, under, other)


# --- repair benchmark ----------------------------------------------------------


@dataclass
class BenchResult:
    cluster_size: int  # size of the found cluster holding the first offending key
    clustered: SearchResult
    singletons: SearchResult  # one key at a time, no clustering
    exhaustive: int  # trials to search every deduplicated version in bounds

    @property
    def fixed(self) -> bool:
        return self.clustered.fixed


def oracle_command(answer_path: str | Path) -> list[str]:
    return [sys.executable, "-S", "-E", str(ORACLE), str(answer_path)]


def bench_repair(
    events: Sequence[KeyEvent],
    answer: AnswerKey,
    strategy: Strategy | str = Strategy.DFS,
    *,
    window: WindowConfig = WindowConfig(),
    threshold: Fraction | float | str = DEFAULT_THRESHOLD,
    start: int | None = None,
    end: int | None = None,
    timeout: float = 30.0,
    singletons: bool = True,
) -> BenchResult:
    """Repair an injected error with clustered search and, optionally, one key at a time.

    ``start`` defaults to the injection instant, mirroring a user who knows
    roughly when the problem appeared.
    """
    store = Store()
    store.record_all(events)
    clustering, sets = cluster_events(store.events_in(), window, threshold)
    tag = answer.keys[0].tag
    cfg = SearchConfig(Strategy(strategy) if isinstance(strategy, str) else strategy,
                       answer.error_time if start is None else start, end)
    with tempfile.TemporaryDirectory(prefix="cfgrewind-bench-") as tmp:
        answer_path = Path(tmp) / "answer.json"
        answer_path.write_text(answer.to_json(), encoding="utf-8")
        trial = Trial(oracle_command(answer_path), [Target(tag, f"{tag}.conf", FormatKind.FLAT, store.state(tag))],
                      timeout=timeout)
        clustered = search(cfg, trial, store, clustering.clusters, sets)
        exhaustive = len(plan(cfg, trial, store, clustering.clusters, sets).trials)
        if singletons:
            alone = search(cfg, trial, store, singleton_clusters(sets).clusters, sets)
        else:
            alone = SearchResult(Outcome.EXHAUSTED)
    holder = clustering.cluster_of(answer.keys[0])
    return BenchResult(len(holder) if holder else 0, clustered, alone, exhaustive)


# --- reports -----------------------------------------------------------------


def accuracy_table(rows: Sequence[tuple[str, int, AccuracyReport, int]]) -> str:
    """Tab-separated clustering table: one row per scenario."""
    out = ["scenario\tkeys\tclusters(multi/all)\tcorrect\toversized\tundersized\taccuracy\tscoring"]
    for name, n_keys, rep, n_all in rows:
        acc = "N/A" if rep.accuracy is None else f"{100 * rep.accuracy:.1f}%"
        out.append(
            f"{name}\t{n_keys}\t{rep.total}/{n_all}\t{rep.correct}\t{rep.oversized}\t{rep.undersized}\t{acc}\texact-match"
        )
    return "\n".join(out) + "\n"


def repair_table(rows: Sequence[tuple[str, BenchResult]]) -> str:
    """Tab-separated repair table: one row per injected error."""
    out = ["case\tcl.size\ttrials\texhaustive\tskipped\tscreens\tclustered\tsingletons"]
    for name, r in rows:
        yn = lambda ok: "Y" if ok else "N"  # noqa: E731
        out.append(
            f"{name}\t{r.cluster_size}\t{r.clustered.trials_executed}\t{r.exhaustive}"
            f"\t{r.clustered.skipped_duplicates}\t{r.clustered.unique_observations}"
            f"\t{yn(r.clustered.fixed)}\t{yn(r.singletons.fixed)}"
        )
    return "\n".join(out) + "\n"


def trace_bytes(events: Iterable[KeyEvent]) -> bytes:
    return encode_events(events)

