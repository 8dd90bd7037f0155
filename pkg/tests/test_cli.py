import subprocess
import sys
import threading
import time

import pytest

from selfheal import trace
from selfheal.demo import SECRET_LINE, SECRET_LINES, SECRET_SYMBOL
from selfheal.elfsyms import runtime_symbol_address
from selfheal.golden import load
from selfheal.harness import read_event_log

CLI = [sys.executable, "-m", "selfheal.cli"]


def run_cli(*args, **kwargs):
    return subprocess.run([*CLI, *map(str, args)], capture_output=True,
                          text=True, timeout=kwargs.pop("timeout", 120), **kwargs)


class StderrTail:
    """Collect a process's stderr lines in the background for polling."""

    def __init__(self, proc):
        self.lines: list[str] = []
        self._thread = threading.Thread(target=self._pump, args=(proc,), daemon=True)
        self._thread.start()

    def _pump(self, proc):
        for raw in proc.stderr:
            self.lines.append(raw.rstrip("\n"))

    def wait_for(self, needle: str, timeout: float = 15.0) -> str:
        deadline = time.time() + timeout
        while time.time() < deadline:
            for line in list(self.lines):
                if needle in line:
                    return line
            time.sleep(0.01)
        raise AssertionError(f"{needle!r} not seen in stderr: {self.lines}")


def test_bake_round_trips(demo_exe, tmp_path):
    out = tmp_path / "target.golden"
    result = run_cli("bake", "--binary", demo_exe, "--symbol", SECRET_SYMBOL,
                     "--out", out)
    assert result.returncode == 0, result.stderr
    image = load(out)  # parse validates everything
    assert image.symbol == SECRET_SYMBOL
    assert image.data[0] == 0x55


def test_bake_missing_symbol(demo_exe, tmp_path):
    result = run_cli("bake", "--binary", demo_exe, "--symbol", "nope",
                     "--out", tmp_path / "x.golden")
    assert result.returncode == 1
    assert "SymbolNotFound" in result.stderr


def test_bake_stripped_binary(demo_exe, tmp_path):
    import shutil
    strip = shutil.which("strip")
    if strip is None:
        pytest.skip("no strip tool")
    stripped = tmp_path / "stripped"
    shutil.copy(demo_exe, stripped)
    subprocess.run([strip, str(stripped)], check=True)
    result = run_cli("bake", "--binary", stripped, "--symbol", SECRET_SYMBOL,
                     "--out", tmp_path / "x.golden")
    assert result.returncode == 1
    assert "StrippedBinary" in result.stderr


def test_attack_unguarded_target_records_hit(tracing_ok, demo_exe, demo_golden_path, tmp_path):
    events_path = tmp_path / "events.log"
    result = run_cli("attack", "--target", str(demo_exe), "--golden", demo_golden_path,
                     "--int3", "0", "--events", events_path)
    assert result.returncode == 0, result.stderr
    events = read_event_log(events_path)
    assert [e.kind for e in events] == ["Int3Hit", "Exit"]


def test_attack_self_healing_target_records_no_hit(tracing_ok, demo_exe,
                                                   demo_golden_path, tmp_path):
    events_path = tmp_path / "events.log"
    result = run_cli("attack", "--target", f"{demo_exe} --self-heal",
                     "--golden", demo_golden_path,
                     "--int3", "0", "--events", events_path)
    assert result.returncode == 0, result.stderr
    events = read_event_log(events_path)
    assert [e.kind for e in events] == ["Exit"]
    assert "breakpoint removed" in result.stderr


def test_attack_patch_flag_applies(tracing_ok, demo_exe, demo_golden_path, demo_image, tmp_path):
    # a patch that restores golden bytes is behavior-neutral: target runs clean
    events_path = tmp_path / "events.log"
    golden_chunk = demo_image.data[2:4].hex()
    result = run_cli("attack", "--target", str(demo_exe), "--golden", demo_golden_path,
                     "--patch", f"2={golden_chunk}", "--events", events_path)
    assert result.returncode == 0, result.stderr
    assert f"patched offset 2 with {golden_chunk}" in result.stderr
    assert [e.kind for e in read_event_log(events_path)] == ["Exit"]


def _spawn_guard(demo_exe, demo_golden_path, *extra):
    return subprocess.Popen(
        [*CLI, "guard", "--golden", str(demo_golden_path), *map(str, extra),
         "--", str(demo_exe), "--gate"],
        stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
        text=True, bufsize=1)


def test_guard_heals_live_attack(demo_exe, demo_golden_path, demo_image):
    guard = _spawn_guard(demo_exe, demo_golden_path,
                         "--policy", "heal", "--period-ms", "20", "--force-mem")
    tail = StderrTail(guard)
    try:
        line = tail.wait_for("guard: pid=")
        pid = int(line.split("pid=")[1].split()[0])
        base = runtime_symbol_address(pid, demo_exe, SECRET_SYMBOL)
        trace.oob_write(pid, base, b"\xcc", force=True)
        tail.wait_for("guard: healed 1 offsets")
        live = trace.oob_read(pid, base, demo_image.length)
        assert live == demo_image.data
        guard.stdin.write("\n")
        guard.stdin.flush()
        code = guard.wait(timeout=30)
        out = guard.stdout.read()
        assert code == 0
        assert out.count(SECRET_LINE) == SECRET_LINES
    finally:
        if guard.poll() is None:
            guard.kill()
            guard.wait()


def test_guard_terminate_policy(demo_exe, demo_golden_path):
    guard = _spawn_guard(demo_exe, demo_golden_path,
                         "--policy", "terminate", "--terminate-status", "7",
                         "--period-ms", "20", "--force-mem")
    tail = StderrTail(guard)
    try:
        line = tail.wait_for("guard: pid=")
        pid = int(line.split("pid=")[1].split()[0])
        base = runtime_symbol_address(pid, demo_exe, SECRET_SYMBOL)
        trace.oob_write(pid, base, b"\xcc", force=True)
        tail.wait_for("terminating")
        assert guard.wait(timeout=30) == 7
    finally:
        if guard.poll() is None:
            guard.kill()
            guard.wait()


def test_guard_clean_run_exits_zero(demo_exe, demo_golden_path):
    guard = subprocess.Popen(
        [*CLI, "guard", "--golden", str(demo_golden_path), "--period-ms", "20",
         "--", str(demo_exe)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    out, err = guard.communicate(timeout=60)
    assert guard.returncode == 0, err
    assert out.count(SECRET_LINE) == SECRET_LINES
    assert "tick=1 clean" in err
    assert "target exited 0" in err


def test_heal_daemon_occupied_socket(tmp_path):
    sock = tmp_path / "occupied.sock"
    sock.write_bytes(b"")  # plain file occupies the path
    result = run_cli("heal-daemon", "--socket", sock)
    assert result.returncode == 1
    assert "BindFailed" in result.stderr


def test_demo_transcript(tracing_ok, tmp_path):
    result = run_cli("demo", "--scenario", "transcript", "--workdir", tmp_path / "w",
                     timeout=300)
    assert result.returncode == 0, result.stderr
    lines = result.stdout.splitlines()
    assert lines[0] == "DIRTY 1 0"
    assert lines[1] == "HEALED 1"
    assert lines[2:] == [SECRET_LINE] * SECRET_LINES


def test_attack_watch_degrades_loudly_without_debugregs(tracing_ok, demo_exe,
                                                        demo_golden_path, tmp_path):
    from selfheal import trace as trace_mod
    ok, _ = trace_mod.debug_registers_capability()
    if ok:
        pytest.skip("debug registers work here; the degraded path cannot occur")
    result = run_cli("attack", "--target", str(demo_exe), "--golden", demo_golden_path,
                     "--watch", "0", "--events", tmp_path / "e.log")
    assert result.returncode == 1
    assert "DebugRegistersUnsupported" in result.stderr


def test_usage_errors_exit_2():
    assert run_cli("frobnicate").returncode == 2
    assert run_cli("bake", "--binary", "x", "--unknown-flag").returncode == 2
    assert run_cli("demo", "--scenario", "unknown").returncode == 2


def test_module_entry_point():
    result = subprocess.run([sys.executable, "-m", "selfheal", "--help"],
                            capture_output=True, text=True, timeout=60)
    assert result.returncode == 0
    assert "bake" in result.stdout and "heal-daemon" in result.stdout
