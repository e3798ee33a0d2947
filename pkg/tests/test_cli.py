import fcntl
import os
import re

import pytest

from cfgrewind import cli, repair, ttkv
from cfgrewind.ttkv import TOMBSTONE
from conftest import K, sec

T0 = 1_700_000_000


@pytest.fixture
def ws(tmp_path, monkeypatch):
    """Workspace with one INI store; returns a runner for the CLI."""
    monkeypatch.chdir(tmp_path)
    (tmp_path / "app.ini").write_text("[ui]\ntheme=light\nsize=10\n[net]\nproxy=none\n")
    assert cli.main(["track", "app", "app.ini", "--format", "ini"]) == 0

    def run(*argv):
        return cli.main(list(argv))

    run.dir = tmp_path
    return run


def _at(t):
    return ["--at", str(T0 + t)]


def test_snapshot_first_run_records_baseline_only(ws, capsys):
    assert ws("snapshot", *_at(0)) == 0
    assert "baseline recorded (3 keys)" in capsys.readouterr().out
    assert not (ws.dir / "history.log").exists() or (ws.dir / "history.log").read_bytes() == b""
    assert (ws.dir / ".cfgrewind/initial/app").exists()


def test_snapshot_edit_records_one_write(ws, capsys):
    ws("snapshot", *_at(0))
    (ws.dir / "app.ini").write_text("[ui]\ntheme=dark\nsize=10\n[net]\nproxy=none\n")
    assert ws("snapshot", *_at(10)) == 0
    assert "app: 1 event(s)" in capsys.readouterr().out
    store = ttkv.load(ws.dir / "history.log")
    assert len(store) == 1 and store.value_at(K("ui/theme"), sec(T0 + 10)) == b"dark"
    # unchanged file: nothing new
    assert ws("snapshot", *_at(20)) == 0
    assert len(ttkv.load(ws.dir / "history.log")) == 1


def test_snapshot_reports_unparsable_file_but_keeps_going(ws, capsys):
    (ws.dir / "other.conf").write_text("a=1\n")
    ws("track", "other", "other.conf")
    ws("snapshot", *_at(0))
    (ws.dir / "app.ini").write_text("[broken\n")
    (ws.dir / "other.conf").write_text("a=2\n")
    assert ws("snapshot", *_at(5)) == 0
    err = capsys.readouterr().err
    assert "app" in err and "byte 0" in err
    assert len(ttkv.load(ws.dir / "history.log")) == 1


def _edit_history(ws):
    """theme and size always change together; proxy alone. Last edit breaks the pair."""
    ws("snapshot", *_at(0))
    states = [
        (100, "dark", "12", "none"),
        (200, "blue", "14", "none"),
        (300, "blue", "14", "squid"),
        (400, "BAD", "99", "squid"),
    ]
    for t, theme, size, proxy in states:
        (ws.dir / "app.ini").write_text(f"[ui]\ntheme={theme}\nsize={size}\n[net]\nproxy={proxy}\n")
        assert ws("snapshot", *_at(t)) == 0


def _check(ws, body):
    path = ws.dir / "check.sh"
    path.write_text("#!/bin/sh\n" + body)
    path.chmod(0o755)
    return str(path)


def test_repair_yes_applies_fix(ws, capsys):
    _edit_history(ws)
    check = _check(ws, 'grep -qx "theme=blue" "$CFG_APP" && grep -qx "size=14" "$CFG_APP"\n')
    assert ws("repair", "--yes", "--check", check) == 0
    out = capsys.readouterr().out
    assert "fix: cluster app:ui/size" in out and "applied: 2 event(s)" in out
    text = (ws.dir / "app.ini").read_text()
    assert "theme=blue" in text and "size=14" in text and "proxy=squid" in text
    assert (ws.dir / ".cfgrewind/repair-transcript.log").read_text().startswith("# baseline")
    # baseline follows the applied fix, so the next snapshot sees nothing new
    n = len(ttkv.load(ws.dir / "history.log"))
    ws("snapshot", *_at(900))
    assert len(ttkv.load(ws.dir / "history.log")) == n


def test_repair_without_yes_does_not_apply(ws, capsys):
    _edit_history(ws)
    before = (ws.dir / "app.ini").read_bytes()
    check = _check(ws, 'grep -qx "theme=blue" "$CFG_APP"\n')
    assert ws("repair", "--check", check) == cli.EXIT_NOT_APPLIED
    assert (ws.dir / "app.ini").read_bytes() == before


def test_repair_exhausted_exit_code_and_no_changes(ws):
    _edit_history(ws)
    before = {p: (ws.dir / p).read_bytes() for p in ("app.ini", "history.log")}
    assert ws("repair", "--yes", "--check", "/bin/false") == cli.EXIT_EXHAUSTED
    assert {p: (ws.dir / p).read_bytes() for p in before} == before
    assert "# outcome\texhausted" in (ws.dir / ".cfgrewind/repair-transcript.log").read_text()


def test_repair_review_writes_per_trial_files(ws, capsys):
    _edit_history(ws)
    check = _check(ws, 'echo "checking"; grep -qx "theme=dark" "$CFG_APP"\n')
    before = (ws.dir / "app.ini").read_bytes()
    assert ws("repair", "--review", "--check", check) == cli.EXIT_NOT_APPLIED
    files = sorted((ws.dir / ".cfgrewind/review").iterdir())
    assert files and all(re.fullmatch(r"trial-\d{4}\.txt", f.name) for f in files)
    assert b"checking" in files[0].read_bytes()
    assert (ws.dir / "app.ini").read_bytes() == before


def test_repair_baseline_passing_and_missing_check(ws, capsys):
    _edit_history(ws)
    assert ws("repair", "--check", "/bin/true") == cli.EXIT_TRIAL
    assert "already passes" in capsys.readouterr().err
    assert ws("repair", "--check", str(ws.dir / "nope")) == cli.EXIT_TRIAL


def test_inspect_key_and_cluster(ws, capsys):
    _edit_history(ws)
    (ws.dir / "app.ini").write_text("[ui]\ntheme=BAD\nsize=99\n")
    ws("snapshot", *_at(500))
    capsys.readouterr()
    assert ws("inspect", "app:net/proxy") == 0
    out = capsys.readouterr().out
    assert "<deleted>" in out and "writes=1 deletes=1" in out
    assert ws("inspect", "--cluster", "app:ui/size") == 0
    out = capsys.readouterr().out
    assert "app:ui/theme" in out and "theme=light" in out  # initial baseline stands in for unborn
    assert ws("inspect", "app:nope") == cli.EXIT_NOT_FOUND
    assert ws("inspect", "--cluster", "app:ui/theme") == cli.EXIT_NOT_FOUND


def test_cluster_report_and_flags(ws, capsys):
    _edit_history(ws)
    capsys.readouterr()
    assert ws("cluster", "-o", "-") == 0
    out = capsys.readouterr().out
    assert "cluster app:ui/size" in out and "size: 2" in out
    assert ws("cluster", "-o", "-", "--min-correlation", "2") == 0
    assert capsys.readouterr().out == out
    with pytest.raises(SystemExit):
        ws("cluster", "--threshold", "1", "--min-correlation", "1")


def test_cluster_empty_store_and_reciprocal_flag(ws, capsys):
    assert ws("cluster", "-o", "-") == 0
    assert capsys.readouterr().out.startswith("# clusters: 0")
    _edit_history(ws)
    capsys.readouterr()
    ws("cluster", "-o", "-", "--min-correlation", "1")
    by_corr = capsys.readouterr().out
    ws("cluster", "-o", "-", "--threshold", "1.0")
    assert capsys.readouterr().out == by_corr


def test_ingest_trace_fault_leaves_log_alone(ws, tmp_path, monkeypatch):
    trace = tmp_path / "t.log"
    trace.write_bytes(ttkv.encode_events([ttkv.KeyEvent.delete(K("x"), sec(3))]))
    real = ttkv.append_events

    def failing(path, events):
        real(path, events)
        raise OSError("disk full")

    monkeypatch.setattr(ttkv, "append_events", failing)
    assert ws("ingest-trace", str(trace)) == cli.EXIT_IO
    assert not (ws.dir / "history.log").exists()


def test_locked_workspace(ws, capsys):
    ws("snapshot", *_at(0))
    fd = os.open(ws.dir / "history.log.lock", os.O_RDWR | os.O_CREAT)
    try:
        fcntl.flock(fd, fcntl.LOCK_EX)
        assert ws("snapshot", *_at(5)) == cli.EXIT_LOCKED
    finally:
        os.close(fd)


def test_snapshot_fault_leaves_no_partial_state(ws, monkeypatch):
    ws("snapshot", *_at(0))
    (ws.dir / "app.ini").write_text("[ui]\ntheme=dark\nsize=10\n[net]\nproxy=none\n")
    base_before = (ws.dir / ".cfgrewind/baselines/app").read_bytes()
    real = ttkv.append_events

    def failing(path, events):
        real(path, events)
        raise OSError("disk full")

    monkeypatch.setattr(ttkv, "append_events", failing)
    assert ws("snapshot", *_at(10)) == cli.EXIT_IO
    assert not (ws.dir / "history.log").exists()  # it did not exist before
    assert (ws.dir / ".cfgrewind/baselines/app").read_bytes() == base_before


def test_apply_fault_restores_live_file_and_log(ws, monkeypatch):
    _edit_history(ws)
    before = {p: (ws.dir / p).read_bytes() for p in ("app.ini", "history.log")}
    real = ttkv.append_events

    def failing(path, events):
        real(path, events)
        raise OSError("disk full")

    monkeypatch.setattr(repair, "append_events", failing)
    check = _check(ws, 'grep -qx "theme=blue" "$CFG_APP"\n')
    assert ws("repair", "--yes", "--check", check) == cli.EXIT_IO
    assert {p: (ws.dir / p).read_bytes() for p in before} == before


def test_ingest_trace(ws, tmp_path, capsys):
    trace = tmp_path / "t.log"
    trace.write_bytes(ttkv.encode_events([ttkv.KeyEvent.delete(K("x"), sec(3))]))
    assert ws("ingest-trace", str(trace)) == 0
    assert ttkv.load(ws.dir / "history.log").value_at(K("x"), sec(4)) is TOMBSTONE
    trace.write_text("garbage\n")
    assert ws("ingest-trace", str(trace)) == cli.EXIT_INPUT


def test_simulate_command(tmp_path, capsys):
    spec = tmp_path / "s.spec"
    spec.write_text("seed=2\nduration_days=30\ncluster.0.keys=a,b\ncluster.0.rate=1\n"
                    "independent.x=0.5\nerror.cluster=0\nerror.offset_days=5\n")
    out = tmp_path / "out"
    assert cli.main(["simulate", str(spec), "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "100.0%" in printed and "\tY\tN" in printed
    assert {p.name for p in out.iterdir()} == {"trace.log", "clusters.txt", "accuracy.tsv", "injected.log", "repair.tsv"}


def test_help_lists_every_flag(capsys):
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        text = p.format_help()
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)


def test_time_and_duration_parsing():
    assert cli.parse_duration("250ms") == sec(0.25)
    assert cli.parse_duration("2") == sec(2)
    assert cli.parse_time("1700000000.5") == sec(T0 + 0.5)
    assert cli.parse_time("2023-11-14T22:13:20Z") == sec(T0)
    assert cli.parse_time("Tue, 14 Nov 2023 22:13:20 +0000") == sec(T0)
    assert cli.render_time(sec(T0)) == "2023-11-14T22:13:20.000000000Z"
