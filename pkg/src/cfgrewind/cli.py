"""Command-line entry point.

One manifest (INI) describes one managed application::

    [workspace]
    log = history.log
    state_dir = .cfgrewind
    window = 1s
    threshold = 0.5
    strategy = dfs

    [store.prefs]
    path = prefs.ini
    format = ini

Exit codes: 0 success (repair: fixed and applied), 3 fixed but not applied,
4 search exhausted, 10 unknown key/cluster, 11 workspace locked, 12 bad
input, 13 check command failure, 14 fix rejected, 15 I/O failure.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as dt
import email.utils
import fcntl
import logging
import os
import re
import shutil
import sys
import time
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

from . import clustering, ingest, repair, simulate, ttkv
from .ingest import FormatKind
from .ttkv import NS_PER_SECOND, KeyId, format_timestamp

logger = logging.getLogger("cfgrewind")

EXIT_OK = 0
EXIT_NOT_APPLIED = 3
EXIT_EXHAUSTED = 4
EXIT_NOT_FOUND = 10
EXIT_LOCKED = 11
EXIT_INPUT = 12
EXIT_TRIAL = 13
EXIT_APPLY = 14
EXIT_IO = 15


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


# --- time parsing ------------------------------------------------------------

_UNITS = {"ns": 1, "us": 10**3, "ms": 10**6, "s": NS_PER_SECOND, "m": 60 * NS_PER_SECOND,
          "h": 3600 * NS_PER_SECOND, "d": 86400 * NS_PER_SECOND}


def parse_duration(text: str) -> int:
    """``1s``, ``250ms``, ``2d`` or a bare number of seconds -> nanoseconds."""
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+)\s*(ns|us|ms|s|m|h|d)?\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"bad duration {text!r}")
    ns = Decimal(m.group(1)) * _UNITS[m.group(2) or "s"]
    if ns <= 0:
        raise argparse.ArgumentTypeError("duration must be positive")
    return int(ns)


def parse_time(text: str) -> int:
    """Epoch seconds (fractional allowed) or an ISO-8601 / RFC 2822 date -> ns."""
    text = text.strip()
    try:
        return int(Decimal(text) * NS_PER_SECOND)
    except InvalidOperation:
        pass
    stamp = None
    iso = text[:-1] + "+00:00" if text.endswith(("Z", "z")) else text
    with contextlib.suppress(ValueError):
        stamp = dt.datetime.fromisoformat(iso)
    if stamp is None:
        with contextlib.suppress(TypeError, ValueError):
            stamp = email.utils.parsedate_to_datetime(text)
    if stamp is None:
        raise argparse.ArgumentTypeError(f"cannot parse time {text!r}")
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=dt.timezone.utc)
    delta = stamp - dt.datetime(1970, 1, 1, tzinfo=dt.timezone.utc)
    return (delta.days * 86400 + delta.seconds) * NS_PER_SECOND + delta.microseconds * 1000


def render_time(ns: int) -> str:
    seconds, nanos = divmod(ns, NS_PER_SECOND)
    stamp = dt.datetime.fromtimestamp(seconds, dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")
    return f"{stamp}.{nanos:09d}Z"


# --- manifest ----------------------------------------------------------------


@dataclass
class StoreEntry:
    tag: str
    path: Path
    kind: FormatKind


@dataclass
class WorkspaceManifest:
    source: Path
    stores: list[StoreEntry] = field(default_factory=list)
    log: Path = Path("history.log")
    state_dir: Path = Path(".cfgrewind")
    window_ns: int = clustering.DEFAULT_WINDOW_NS
    threshold: Fraction = clustering.DEFAULT_THRESHOLD
    strategy: repair.Strategy = repair.Strategy.DFS

    @property
    def lock_path(self) -> Path:
        return self.log.with_name(self.log.name + ".lock")

    def baseline(self, tag: str) -> Path:
        return self.state_dir / "baselines" / tag

    def initial(self, tag: str) -> Path:
        return self.state_dir / "initial" / tag

    def store(self, tag: str) -> StoreEntry | None:
        for s in self.stores:
            if s.tag == tag:
                return s
        return None


def load_manifest(path: str | Path) -> WorkspaceManifest:
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise CliError(f"manifest {path} not found", EXIT_INPUT) from None
    try:
        values = ingest.flatten(data, FormatKind.INI, "manifest").values
    except ingest.FormatError as exc:
        raise CliError(f"{path}: {exc}") from None
    root = path.resolve().parent
    sections: dict[str, dict[str, str]] = {}
    for key, value in values.items():
        if len(key.path) != 2:
            raise CliError(f"{path}: setting {key.path_str!r} outside a section")
        sections.setdefault(key.path[0], {})[key.path[1]] = value.decode("utf-8")
    ws = sections.pop("workspace", {})
    manifest = WorkspaceManifest(path)
    manifest.log = root / ws.get("log", "history.log")
    manifest.state_dir = root / ws.get("state_dir", ".cfgrewind")
    try:
        if "window" in ws:
            manifest.window_ns = parse_duration(ws["window"])
        if "threshold" in ws:
            manifest.threshold = clustering.as_fraction(ws["threshold"])
        if "strategy" in ws:
            manifest.strategy = repair.Strategy(ws["strategy"].lower())
    except (argparse.ArgumentTypeError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from None
    for name, attrs in sections.items():
        if not name.startswith("store."):
            raise CliError(f"{path}: unknown section [{name}]")
        tag = name[len("store."):]
        if manifest.store(tag):
            raise CliError(f"{path}: duplicate store tag {tag!r}")
        try:
            KeyId(tag, ("x",))
            kind = FormatKind.parse(attrs.get("format", "flat"))
        except ValueError as exc:
            raise CliError(f"{path}: [{name}]: {exc}") from None
        if "path" not in attrs:
            raise CliError(f"{path}: [{name}] needs a path")
        manifest.stores.append(StoreEntry(tag, root / attrs["path"], kind))
    return manifest


@contextlib.contextmanager
def workspace_lock(manifest: WorkspaceManifest) -> Iterator[None]:
    manifest.log.parent.mkdir(parents=True, exist_ok=True)
    fd = os.open(manifest.lock_path, os.O_RDWR | os.O_CREAT, 0o644)
    try:
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise CliError(f"{manifest.lock_path} is held by another process", EXIT_LOCKED) from None
        yield
    finally:
        os.close(fd)


def _load_store(manifest: WorkspaceManifest) -> ttkv.Store:
    try:
        return ttkv.load(manifest.log)
    except ttkv.LogFormatError as exc:
        raise CliError(f"{manifest.log}: {exc}") from None


class _Rollback:
    """Undo log appends and file replacements if the block raises."""

    def __init__(self, log: Path):
        self.log = log
        self.log_size = log.stat().st_size if log.exists() else None
        self.files: dict[Path, bytes | None] = {}

    def remember(self, path: Path) -> None:
        if path not in self.files:
            self.files[path] = path.read_bytes() if path.exists() else None

    def undo(self) -> None:
        if self.log_size is None:
            self.log.unlink(missing_ok=True)
        elif self.log.exists() and self.log.stat().st_size != self.log_size:
            with open(self.log, "r+b") as fh:
                fh.truncate(self.log_size)
        for path, data in self.files.items():
            if data is None:
                path.unlink(missing_ok=True)
            else:
                path.write_bytes(data)


def _replace(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_bytes(data)
    try:
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


# --- subcommands -------------------------------------------------------------


def cmd_snapshot(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    now = args.at if args.at is not None else time.time_ns()
    with workspace_lock(manifest):
        ttkv.recover(manifest.log)
        events: list[ttkv.KeyEvent] = []
        updates: list[tuple[Path, bytes]] = []
        failed = 0
        for entry in manifest.stores:
            try:
                current = entry.path.read_bytes()
                after = ingest.flatten(current, entry.kind, entry.tag, now)
                base_path = manifest.baseline(entry.tag)
                if not base_path.exists():
                    updates += [(base_path, current), (manifest.initial(entry.tag), current)]
                    print(f"{entry.tag}: baseline recorded ({len(after.values)} keys)")
                    continue
                before = ingest.flatten(base_path.read_bytes(), entry.kind, entry.tag)
            except (OSError, ingest.FormatError) as exc:
                failed += 1
                print(f"error: {entry.tag}: {entry.path}: {exc}", file=sys.stderr)
                continue
            found = ingest.diff(before, after, now)
            events += found
            if found:
                updates.append((base_path, current))
            print(f"{entry.tag}: {len(found)} event(s)")
        undo = _Rollback(manifest.log)
        try:
            for path, _ in updates:
                undo.remember(path)
            ttkv.append_events(manifest.log, events)
            for path, data in updates:
                _replace(path, data)
        except BaseException:
            undo.undo()
            raise
    if failed:
        print(f"{failed} store(s) could not be read; others were recorded", file=sys.stderr)
    return EXIT_OK


def cmd_track(args: argparse.Namespace) -> int:
    path = Path(args.manifest)
    try:
        KeyId(args.tag, ("x",))
    except ttkv.StoreError as exc:
        raise CliError(str(exc)) from None
    if path.exists():
        manifest = load_manifest(path)
        if manifest.store(args.tag):
            raise CliError(f"store tag {args.tag!r} is already tracked")
        text = path.read_text(encoding="utf-8")
    else:
        text = "[workspace]\nlog = history.log\nstate_dir = .cfgrewind\n"
    file_path = os.path.relpath(Path(args.file).resolve(), path.resolve().parent)
    if not text.endswith("\n"):
        text += "\n"
    text += f"\n[store.{args.tag}]\npath = {file_path}\nformat = {args.format.value}\n"
    path.write_text(text, encoding="utf-8")
    print(f"tracking {args.tag} -> {file_path} ({args.format.value})")
    return EXIT_OK


def cmd_ingest_trace(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    try:
        data = Path(args.trace).read_bytes()
        events = list(ttkv.iter_log(data, args.trace))
    except ttkv.LogFormatError as exc:
        raise CliError(f"{args.trace}: {exc}") from None
    with workspace_lock(manifest):
        ttkv.recover(manifest.log)
        undo = _Rollback(manifest.log)
        try:
            ttkv.append_events(manifest.log, events)
        except BaseException:
            undo.undo()
            raise
    print(f"{len(events)} event(s) ingested")
    return EXIT_OK


def _threshold(args: argparse.Namespace, manifest: WorkspaceManifest):
    if args.min_correlation is not None:
        if args.min_correlation <= 0:
            raise CliError("--min-correlation must be positive")
        return clustering.distance_from_correlation(args.min_correlation)
    if args.threshold is not None:
        return args.threshold
    return manifest.threshold


def _clusters(args: argparse.Namespace, manifest: WorkspaceManifest, store: ttkv.Store):
    window = clustering.WindowConfig(args.window if args.window is not None else manifest.window_ns)
    events = store.events_in()
    return clustering.cluster_events(events, window, _threshold(args, manifest))


def cmd_cluster(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    store = _load_store(manifest)
    window = clustering.WindowConfig(args.window if args.window is not None else manifest.window_ns)
    events = store.events_in(args.start, args.end)
    try:
        result, _ = clustering.cluster_events(events, window, _threshold(args, manifest))
    except clustering.ClusteringError as exc:
        raise CliError(str(exc)) from None
    report = clustering.render_report(result)
    if args.output == "-":
        sys.stdout.write(report)
    else:
        out = Path(args.output) if args.output else manifest.state_dir / "clusters.txt"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report, encoding="utf-8")
        multi = sum(1 for c in result.clusters if len(c) > 1)
        print(f"{len(result.clusters)} cluster(s), {multi} with more than one key -> {out}")
    return EXIT_OK


def _targets(manifest: WorkspaceManifest) -> list[repair.Target]:
    targets = []
    names = set()
    for entry in manifest.stores:
        try:
            base = ingest.read_snapshot(entry.path, entry.kind, entry.tag).values
            init_path = manifest.initial(entry.tag)
            initial = ingest.read_snapshot(init_path, entry.kind, entry.tag).values if init_path.exists() else {}
        except (OSError, ingest.FormatError) as exc:
            raise CliError(f"{entry.tag}: {entry.path}: {exc}") from None
        name = entry.path.name
        if name in names:
            name = f"{entry.tag}-{name}"
        names.add(name)
        targets.append(repair.Target(entry.tag, name, entry.kind, base, initial))
    return targets


def _check_argv(argv: Sequence[str]) -> list[str]:
    argv = list(argv)
    if argv and os.sep in argv[0] and Path(argv[0]).exists():
        argv[0] = str(Path(argv[0]).resolve())
    return argv


def cmd_repair(args: argparse.Namespace) -> int:
    if not args.check:
        raise CliError("repair needs --check followed by the check command")
    manifest = load_manifest(args.manifest)
    strategy = args.strategy or manifest.strategy
    with workspace_lock(manifest):
        store = _load_store(manifest)
        result_c, sets = _clusters(args, manifest, store)
        trial = repair.Trial(_check_argv(args.check), _targets(manifest), timeout=args.timeout,
                             keep_output=args.review)
        cfg = repair.SearchConfig(strategy, args.start, args.end)

        def progress(obs: repair.Observation) -> None:
            print(f"trial {obs.trial}: {obs.cluster_id} @ {render_time(obs.as_of)} -> {obs.verdict.value}",
                  file=sys.stderr)

        try:
            result = repair.search(cfg, trial, store, result_c.clusters, sets, review=args.review,
                                   on_trial=progress)
        except repair.TrialError as exc:
            raise CliError(str(exc), EXIT_TRIAL) from None
        except repair.RepairError as exc:
            raise CliError(str(exc), EXIT_TRIAL) from None

        transcript = Path(args.transcript) if args.transcript else manifest.state_dir / "repair-transcript.log"
        transcript.parent.mkdir(parents=True, exist_ok=True)
        transcript.write_text(repair.render_transcript(result), encoding="utf-8")
        if args.review:
            _write_review(manifest, result)

        print(f"{result.outcome.value}: {result.trials_executed} trial(s), "
              f"{result.skipped_duplicates} duplicate(s) skipped; transcript {transcript}")
        if not result.fixed:
            return EXIT_EXHAUSTED
        print(f"fix: cluster {result.cluster_id} as of {render_time(result.version.as_of)}")
        for key, value in result.version.assignment:
            print(f"  {key} = {repair.render_value(value)}")
        if args.review:
            print(f"review mode: nothing applied; per-trial output in {manifest.state_dir / 'review'}")
            return EXIT_NOT_APPLIED
        if not (args.yes or _confirm("apply this fix to the live configuration?")):
            return EXIT_NOT_APPLIED

        live = {t.tag: manifest.store(t.tag).path for t in trial.targets}
        undo = _Rollback(manifest.log)
        try:
            for t in trial.targets:
                undo.remember(live[t.tag])
                undo.remember(manifest.baseline(t.tag))
            events = repair.apply_fix(result, trial, store, live, time.time_ns(), manifest.log)
            for tag in {e.key.tag for e in events}:
                _replace(manifest.baseline(tag), live[tag].read_bytes())
        except repair.ApplyError as exc:
            undo.undo()
            raise CliError(str(exc), EXIT_APPLY) from None
        except BaseException:
            undo.undo()
            raise
    print(f"applied: {len(events)} event(s) recorded")
    return EXIT_OK


def _confirm(question: str) -> bool:
    if not sys.stdin.isatty():
        return False
    answer = input(f"{question} [y/N] ").strip().lower()
    return answer in ("y", "yes")


def _write_review(manifest: WorkspaceManifest, result: repair.SearchResult) -> None:
    review = manifest.state_dir / "review"
    if review.exists():
        shutil.rmtree(review)
    review.mkdir(parents=True)
    for obs in result.observations:
        body = [
            f"trial: {obs.trial}",
            f"cluster: {obs.cluster_id}",
            f"as_of: {render_time(obs.as_of)}",
            f"verdict: {obs.verdict.value}",
            f"exit: {obs.exit_code if not obs.timed_out else 'timeout'}",
            f"observation: {obs.observation}",
            f"duplicate: {'yes' if obs.duplicate else 'no'}",
            "",
        ]
        data = "\n".join(body).encode() + (obs.output or b"")
        (review / f"trial-{obs.trial:04d}.txt").write_bytes(data)


def cmd_inspect(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    store = _load_store(manifest)
    if args.cluster:
        try:
            ident = KeyId.parse(args.cluster)
        except ttkv.StoreError as exc:
            raise CliError(str(exc), EXIT_NOT_FOUND) from None
        result, sets = _clusters(args, manifest, store)
        c = result.by_id(ident) or None
        if c is None:
            raise CliError(f"no cluster with identifier {args.cluster}", EXIT_NOT_FOUND)
        initial = {}
        for entry in manifest.stores:
            p = manifest.initial(entry.tag)
            if p.exists():
                initial.update(ingest.read_snapshot(p, entry.kind, entry.tag).values)
        print(f"cluster {c.id}: {len(c)} key(s), {c.modification_count} modification(s)")
        for k in c.keys:
            print(f"  {k}")
        versions = repair.enumerate_versions(c, repair.SearchConfig(), store, sets, initial)
        print(f"versions (newest first): {len(versions)}")
        for v in versions:
            print(f"  {render_time(v.as_of)}  {v.describe()}")
        return EXIT_OK
    if not args.key:
        raise CliError("inspect needs a key (tag:path) or --cluster ID")
    try:
        key = KeyId.parse(args.key)
    except ttkv.StoreError as exc:
        raise CliError(str(exc), EXIT_NOT_FOUND) from None
    hist = store.history(key)
    if hist is None:
        raise CliError(f"unknown key {args.key}", EXIT_NOT_FOUND)
    print(f"{key}  writes={hist.write_count} deletes={hist.delete_count}")
    for v in hist.versions:
        kind = "D" if v.value is ttkv.TOMBSTONE else "W"
        print(f"  {render_time(v.timestamp)}  {format_timestamp(v.timestamp)}  {kind}  {repair.render_value(v.value)}")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        spec = simulate.parse_spec(Path(args.spec).read_bytes())
    except (OSError, ingest.FormatError, simulate.ScenarioError) as exc:
        raise CliError(f"{args.spec}: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    window = clustering.WindowConfig(args.window or clustering.DEFAULT_WINDOW_NS)
    threshold = args.threshold if args.threshold is not None else clustering.DEFAULT_THRESHOLD
    if args.min_correlation is not None:
        threshold = clustering.distance_from_correlation(args.min_correlation)

    events = simulate.generate(spec)
    (out / "trace.log").write_bytes(simulate.trace_bytes(events))
    result, _ = clustering.cluster_events(events, window, threshold)
    (out / "clusters.txt").write_text(clustering.render_report(result), encoding="utf-8")
    truth = simulate.ground_truth(spec, events)
    rep = simulate.score_clusters(result.partition(), truth)
    n_keys = len({ev.key for ev in events})
    table = simulate.accuracy_table([(Path(args.spec).stem, n_keys, rep, len(result.clusters))])
    (out / "accuracy.tsv").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    if spec.error is None or args.no_repair:
        return EXIT_OK
    try:
        injected, answer = simulate.inject_error(events, spec)
    except simulate.ScenarioError as exc:
        raise CliError(str(exc)) from None
    (out / "injected.log").write_bytes(simulate.trace_bytes(injected))
    bench = simulate.bench_repair(injected, answer, args.strategy or repair.Strategy.DFS,
                                  window=window, threshold=threshold)
    table = simulate.repair_table([(Path(args.spec).stem, bench)])
    (out / "repair.tsv").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


# --- argument parsing ----------------------------------------------------------


def _threshold_arg(text: str) -> Fraction:
    try:
        value = clustering.as_fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"bad number {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-m", "--manifest", default="cfgrewind.ini", help="workspace manifest (default: %(default)s)")

    clust = argparse.ArgumentParser(add_help=False)
    clust.add_argument("--window", type=parse_duration, help="co-modification window, e.g. 1s (default: manifest or 1s)")
    group = clust.add_mutually_exclusive_group()
    group.add_argument("--threshold", type=_threshold_arg, help="max merge distance (default: manifest or 0.5)")
    group.add_argument("--min-correlation", type=_threshold_arg,
                       help="minimum correlation to merge; same as --threshold 1/C")

    parser = argparse.ArgumentParser(
        prog="cfgrewind",
        description="Record configuration history, cluster co-modified keys, and repair errors by rollback search.",
        epilog="exit codes: 0 ok/applied, 3 fixed not applied, 4 exhausted, 10 unknown id, 11 locked, "
               "12 bad input, 13 check failure, 14 fix rejected, 15 I/O error",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("track", parents=[common], help="add a config file to the manifest")
    p.add_argument("tag")
    p.add_argument("file")
    p.add_argument("--format", type=FormatKind.parse, default=FormatKind.FLAT, help="flat | ini | json")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("snapshot", parents=[common], help="diff tracked files against their baselines")
    p.add_argument("--at", type=parse_time, help="timestamp to record (default: now)")
    p.set_defaults(func=cmd_snapshot)

    p = sub.add_parser("ingest-trace", parents=[common], help="append an event-log trace to the history")
    p.add_argument("trace")
    p.set_defaults(func=cmd_ingest_trace)

    p = sub.add_parser("cluster", parents=[common, clust], help="cluster keys by co-modification")
    p.add_argument("--start", type=parse_time, help="only use events at or after this time")
    p.add_argument("--end", type=parse_time, help="only use events at or before this time")
    p.add_argument("-o", "--output", help="report path, '-' for stdout (default: STATE_DIR/clusters.txt)")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("repair", parents=[common, clust], help="search history for a fixing cluster version")
    p.add_argument("--strategy", type=repair.Strategy, help="dfs or bfs (default: manifest or dfs)")
    p.add_argument("--start", type=parse_time, help="earliest time the error could have been introduced")
    p.add_argument("--end", type=parse_time, help="latest time the error could have been introduced")
    p.add_argument("--review", action="store_true", help="record every trial's output; never apply")
    p.add_argument("--yes", action="store_true", help="apply a found fix without asking")
    p.add_argument("--timeout", type=float, default=repair.DEFAULT_TIMEOUT, help="seconds per trial")
    p.add_argument("--transcript", help="transcript path (default: STATE_DIR/repair-transcript.log)")
    p.add_argument("--check", nargs=argparse.REMAINDER, required=True,
                   help="check command and its arguments (must come last); exit 0 means fixed")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("inspect", parents=[common, clust], help="show a key's history or a cluster's versions")
    p.add_argument("key", nargs="?", help="key as tag:path")
    p.add_argument("--cluster", help="cluster identifier (its smallest key, tag:path)")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("simulate", parents=[clust], help="run a synthetic scenario end to end")
    p.add_argument("spec", help="scenario file (flat key=value)")
    p.add_argument("--out", default="sim-out", help="output directory (default: %(default)s)")
    p.add_argument("--strategy", type=repair.Strategy, help="dfs or bfs (default: dfs)")
    p.add_argument("--no-repair", action="store_true", help="skip error injection and repair")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
