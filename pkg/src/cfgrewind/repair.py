"""Search historical cluster versions for a configuration fix.

Clusters are sorted so the least-modified come first. Each cluster's
versions are the joint states of its keys just before each write set that
touched it (plus the state at the start bound), newest first. A trial
materializes a scratch copy of every managed config file with one
cluster rolled back, runs the user's check command there, and calls the
result Fixed on exit status 0.

Trials whose workspace would be byte-identical to the erroneous state or to
an already-tried state are skipped. Because that depends only on the
pre-execution state, the full trial schedule is known up front
(:func:`plan`); :func:`search` walks it until the first Fixed verdict.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import os
import re
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

from .clustering import Cluster, WriteSet
from .ingest import FlatSnapshot, FormatKind, diff, flatten, serialize
from .ttkv import TOMBSTONE, UNBORN, KeyEvent, KeyId, Store, Value, append_events, format_timestamp

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 60.0


class RepairError(RuntimeError):
    pass


class TrialError(RepairError):
    """The check command could not be run at all."""


class ApplyError(RepairError):
    pass


class Strategy(enum.Enum):
    DFS = "dfs"
    BFS = "bfs"


class Verdict(enum.Enum):
    FIXED = "fixed"
    BROKEN = "broken"


class Outcome(enum.Enum):
    FIXED = "fixed"
    EXHAUSTED = "exhausted"


@dataclass
class Target:
    """One managed config file as seen by the trial workspace.

    ``base`` is the file's current (erroneous) flat state. ``initial`` holds
    values known from before recording began; it stands in for keys that
    are unborn at a version's instant.
    """

    tag: str
    filename: str
    kind: FormatKind
    base: dict[KeyId, bytes]
    initial: dict[KeyId, bytes] = field(default_factory=dict)

    @property
    def env_var(self) -> str:
        return env_var_for(self.tag)


def env_var_for(tag: str) -> str:
    return "CFG_" + re.sub(r"[^A-Za-z0-9]", "_", tag).upper()


@dataclass
class Trial:
    check: list[str]
    targets: list[Target]
    timeout: float = DEFAULT_TIMEOUT
    keep_output: bool = False

    def __post_init__(self) -> None:
        if not self.check:
            raise RepairError("check command is empty")
        names = [t.env_var for t in self.targets]
        if len(set(names)) != len(names):
            raise RepairError(f"store tags collide as environment variables: {names}")
        files = [t.filename for t in self.targets]
        if len(set(files)) != len(files):
            raise RepairError(f"workspace file names collide: {files}")

    def target(self, tag: str) -> Target | None:
        for t in self.targets:
            if t.tag == tag:
                return t
        return None


@dataclass
class SearchConfig:
    strategy: Strategy = Strategy.DFS
    start: int | None = None
    end: int | None = None

    def __post_init__(self) -> None:
        if isinstance(self.strategy, str):
            self.strategy = Strategy(self.strategy.lower())
        if self.start is not None and self.end is not None and self.start > self.end:
            raise RepairError("start time is after end time")


@dataclass(frozen=True)
class ClusterVersion:
    cluster_id: KeyId
    as_of: int
    assignment: tuple[tuple[KeyId, Value], ...]

    def describe(self) -> str:
        parts = []
        for key, value in self.assignment:
            parts.append(f"{key}={render_value(value)}")
        return ", ".join(parts)


def render_value(value: Value) -> str:
    if value is TOMBSTONE:
        return "<deleted>"
    if value is UNBORN:
        return "<unborn>"
    return value.decode("utf-8", errors="backslashreplace")


@dataclass
class Observation:
    trial: int
    cluster_id: KeyId
    as_of: int
    observation: str
    verdict: Verdict
    exit_code: int | None = None
    timed_out: bool = False
    duplicate: bool = False  # same observation as the baseline or an earlier trial
    output: bytes | None = None


@dataclass
class SearchResult:
    outcome: Outcome
    trials_executed: int = 0
    skipped_duplicates: int = 0
    observations: list[Observation] = field(default_factory=list)
    cluster_id: KeyId | None = None
    version: ClusterVersion | None = None
    baseline: str | None = None
    planned: int = 0

    @property
    def fixed(self) -> bool:
        return self.outcome is Outcome.FIXED

    @property
    def unique_observations(self) -> int:
        return sum(1 for o in self.observations if not o.duplicate)


# --- versions and ordering ---------------------------------------------------


def sort_clusters(clusters: Iterable[Cluster]) -> list[Cluster]:
    """Least-modified first; ties by cluster identifier."""
    return sorted(clusters, key=lambda c: (c.modification_count, c.id))


def enumerate_versions(
    cluster: Cluster,
    cfg: SearchConfig,
    store: Store,
    sets: Sequence[WriteSet],
    initial: Mapping[KeyId, bytes] | None = None,
) -> list[ClusterVersion]:
    """Newest-first joint historical states of ``cluster`` within the bounds."""
    members = set(cluster.keys)
    instants = set()
    for ws in sets:
        if members.isdisjoint(ws.keys):
            continue
        if cfg.start is not None and ws.start < cfg.start:
            continue
        if cfg.end is not None and ws.start > cfg.end:
            continue
        instants.add(ws.start - 1)
    if cfg.start is not None and instants:
        instants.add(cfg.start)
    versions: list[ClusterVersion] = []
    previous = None
    for t in sorted(instants, reverse=True):
        assignment = []
        for key in cluster.keys:
            value = store.value_at(key, t)
            if value is UNBORN and initial and key in initial:
                value = initial[key]
            assignment.append((key, value))
        assignment = tuple(assignment)
        if assignment == previous:
            continue
        previous = assignment
        if all(v is UNBORN for _, v in assignment):
            continue
        versions.append(ClusterVersion(cluster.id, t, assignment))
    return versions


def schedule(
    ordered: Sequence[Cluster], versions: Mapping[KeyId, Sequence[ClusterVersion]], strategy: Strategy
) -> Iterator[ClusterVersion]:
    if strategy is Strategy.DFS:
        for c in ordered:
            yield from versions[c.id]
        return
    depth = 0
    while True:
        emitted = False
        for c in ordered:
            vs = versions[c.id]
            if depth < len(vs):
                emitted = True
                yield vs[depth]
        if not emitted:
            return
        depth += 1


# --- workspace ---------------------------------------------------------------


def materialize(trial: Trial, version: ClusterVersion | None) -> dict[str, bytes]:
    """File name -> bytes for every target, with ``version`` overlaid."""
    overrides: dict[str, dict[KeyId, Value]] = {}
    if version is not None:
        for key, value in version.assignment:
            overrides.setdefault(key.tag, {})[key] = value
    files = {}
    for target in trial.targets:
        values = overlay(target.base, overrides.get(target.tag, {}))
        files[target.filename] = serialize(values, target.kind)
    return files


def overlay(base: Mapping[KeyId, bytes], assignment: Mapping[KeyId, Value]) -> dict[KeyId, bytes]:
    values = dict(base)
    for key, value in assignment.items():
        if isinstance(value, bytes):
            values[key] = value
        else:
            values.pop(key, None)
    return values


def fingerprint(files: Mapping[str, bytes]) -> str:
    h = hashlib.sha256()
    for name in sorted(files):
        h.update(name.encode() + b"\0" + str(len(files[name])).encode() + b"\0" + files[name])
    return h.hexdigest()


def _observation_hash(exit_code: int | None, timed_out: bool, stdout: bytes, stderr: bytes) -> str:
    h = hashlib.sha256()
    h.update(f"{exit_code}:{int(timed_out)}\0".encode())
    h.update(stdout + b"\0" + stderr)
    return h.hexdigest()


@dataclass
class TrialRun:
    verdict: Verdict
    observation: str
    exit_code: int | None
    timed_out: bool
    output: bytes


def run_trial(trial: Trial, version: ClusterVersion | None = None) -> TrialRun:
    """Run the check once in a fresh scratch workspace.

    ``version=None`` runs against the unmodified (erroneous) state.
    """
    files = materialize(trial, version)
    with tempfile.TemporaryDirectory(prefix="cfgrewind-trial-") as scratch:
        env = dict(os.environ)
        env["CFGREWIND_WORKSPACE"] = scratch
        for target in trial.targets:
            path = os.path.join(scratch, target.filename)
            with open(path, "wb") as fh:
                fh.write(files[target.filename])
            env[target.env_var] = path
        try:
            proc = subprocess.run(
                trial.check,
                cwd=scratch,
                env=env,
                stdin=subprocess.DEVNULL,
                capture_output=True,
                timeout=trial.timeout,
            )
        except subprocess.TimeoutExpired as exc:
            out = (exc.stdout or b"") + b"\0" + (exc.stderr or b"")
            obs = _observation_hash(None, True, exc.stdout or b"", exc.stderr or b"")
            return TrialRun(Verdict.BROKEN, obs, None, True, out)
        except OSError as exc:
            raise TrialError(f"cannot start check command {trial.check[0]!r}: {exc}") from exc
    verdict = Verdict.FIXED if proc.returncode == 0 else Verdict.BROKEN
    obs = _observation_hash(proc.returncode, False, proc.stdout, proc.stderr)
    return TrialRun(verdict, obs, proc.returncode, False, proc.stdout + proc.stderr)


# --- search ------------------------------------------------------------------


@dataclass
class Plan:
    baseline: str  # workspace fingerprint of the erroneous state
    trials: list[ClusterVersion]
    skipped: list[int]  # skipped duplicates preceding each trial
    skipped_tail: int = 0

    @property
    def skipped_total(self) -> int:
        return sum(self.skipped) + self.skipped_tail


def plan(
    cfg: SearchConfig,
    trial: Trial,
    store: Store,
    clusters: Sequence[Cluster],
    sets: Sequence[WriteSet],
) -> Plan:
    """Deduplicated trial order for ``cfg.strategy``."""
    initial: dict[KeyId, bytes] = {}
    for target in trial.targets:
        initial.update(target.initial)
    usable = []
    for c in clusters:
        missing = [k for k in c.keys if trial.target(k.tag) is None]
        if missing:
            logger.warning("skipping cluster %s: no workspace file for %s", c.id, missing[0])
            continue
        usable.append(c)
    ordered = sort_clusters(usable)
    versions = {c.id: enumerate_versions(c, cfg, store, sets, initial) for c in ordered}
    baseline = fingerprint(materialize(trial, None))
    seen = {baseline}
    trials: list[ClusterVersion] = []
    skipped: list[int] = []
    pending = 0
    for version in schedule(ordered, versions, cfg.strategy):
        fp = fingerprint(materialize(trial, version))
        if fp in seen:
            pending += 1
            continue
        seen.add(fp)
        trials.append(version)
        skipped.append(pending)
        pending = 0
    return Plan(baseline, trials, skipped, pending)


def search(
    cfg: SearchConfig,
    trial: Trial,
    store: Store,
    clusters: Sequence[Cluster],
    sets: Sequence[WriteSet],
    *,
    review: bool = False,
    on_trial: Callable[[Observation], None] | None = None,
) -> SearchResult:
    """Run trials in schedule order until one is Fixed.

    With ``review`` every planned trial runs and nothing is decided
    automatically; the first Fixed version is still reported.
    """
    schedule_ = plan(cfg, trial, store, clusters, sets)
    base = run_trial(trial, None)
    if base.verdict is Verdict.FIXED:
        raise RepairError("the check command already passes on the current configuration")
    result = SearchResult(Outcome.EXHAUSTED, baseline=base.observation, planned=len(schedule_.trials))
    seen_obs = {base.observation}
    for n, (version, skipped) in enumerate(zip(schedule_.trials, schedule_.skipped), start=1):
        result.skipped_duplicates += skipped
        run = run_trial(trial, version)
        obs = Observation(
            n, version.cluster_id, version.as_of, run.observation, run.verdict,
            run.exit_code, run.timed_out, run.observation in seen_obs,
            run.output if (trial.keep_output or review) else None,
        )
        seen_obs.add(run.observation)
        result.trials_executed = n
        result.observations.append(obs)
        if run.timed_out:
            logger.warning("trial %d timed out after %ss; counted as broken", n, trial.timeout)
        if on_trial:
            on_trial(obs)
        if run.verdict is Verdict.FIXED and result.version is None:
            result.outcome = Outcome.FIXED
            result.cluster_id = version.cluster_id
            result.version = version
            if not review:
                return result
    result.skipped_duplicates += schedule_.skipped_tail
    return result


def render_transcript(result: SearchResult) -> str:
    lines = [f"# baseline\t{result.baseline[:16] if result.baseline else '-'}"]
    for o in result.observations:
        flag = "\ttimeout" if o.timed_out else ""
        lines.append(
            f"{o.trial}\t{o.cluster_id}\t{format_timestamp(o.as_of)}\t{o.verdict.value}\t{o.observation[:16]}{flag}"
        )
    tail = f"# outcome\t{result.outcome.value}\ttrials={result.trials_executed}\tskipped={result.skipped_duplicates}"
    if result.version is not None:
        tail += f"\tcluster={result.cluster_id}\tas_of={format_timestamp(result.version.as_of)}"
    lines.append(tail)
    return "\n".join(lines) + "\n"


# --- applying a fix ----------------------------------------------------------


def apply_fix(
    result: SearchResult,
    trial: Trial,
    store: Store,
    live: Mapping[str, str | os.PathLike],
    now: int,
    log_path: str | os.PathLike | None = None,
) -> list[KeyEvent]:
    """Write the fixing version into the live files and record it.

    ``live`` maps store tag -> live file path. The live files must still be
    in the state the search started from; otherwise nothing is written.
    Returns the events appended to ``store`` (and to ``log_path`` if given).
    """
    if not result.fixed or result.version is None:
        raise ApplyError("search did not find a fix; nothing to apply")
    assignment: dict[str, dict[KeyId, Value]] = {}
    for key, value in result.version.assignment:
        assignment.setdefault(key.tag, {})[key] = value

    drift = []
    for target in trial.targets:
        if target.tag not in assignment:
            continue
        current = flatten(Path(live[target.tag]).read_bytes(), target.kind, target.tag).values
        if current != target.base:
            drift.extend(f"  {e.kind.value} {e.key}" for e in diff(
                FlatSnapshot(target.tag, target.base), FlatSnapshot(target.tag, current), now))
    if drift:
        raise ApplyError("live configuration changed since the search started:\n" + "\n".join(drift))

    events: list[KeyEvent] = []
    writes: list[tuple[Path, bytes]] = []
    for target in trial.targets:
        if target.tag not in assignment:
            continue
        fixed = overlay(target.base, assignment[target.tag])
        events.extend(diff(FlatSnapshot(target.tag, target.base), FlatSnapshot(target.tag, fixed), now))
        writes.append((Path(live[target.tag]), serialize(fixed, target.kind)))

    originals = {path: path.read_bytes() for path, _ in writes}
    try:
        for path, data in writes:
            _atomic_write(path, data)
        if log_path is not None:
            append_events(log_path, events)
    except BaseException:
        for path, data in originals.items():
            _atomic_write(path, data)
        raise
    store.record_all(events)
    return events


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".{path.name}.cfgrewind-tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
