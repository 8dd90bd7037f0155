import subprocess
import sys
from contextlib import contextmanager
from pathlib import Path

import pytest

from selfheal import golden as golden_mod
from selfheal import trace
from selfheal.demo import SECRET_SYMBOL, build_demo_target, find_compiler


def pytest_configure(config):
    config.addinivalue_line("markers", "tracing: needs a working process-tracing interface")
    config.addinivalue_line("markers", "debugregs: needs hardware debug registers")


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, printed on every run."""
    reports = []
    for status in ("passed", "failed", "skipped", "error"):
        reports.extend((status, r) for r in terminalreporter.stats.get(status, []))
    acceptance = [(s, r) for s, r in reports
                  if "test_acceptance" in r.nodeid and r.when in ("call", "setup")]
    if not acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for status, report in sorted(acceptance, key=lambda x: x[1].nodeid):
        name = report.nodeid.split("::")[-1]
        if status == "passed":
            line = f"[PASS] {name}"
        elif status == "skipped":
            reason = ""
            if isinstance(report.longrepr, tuple):
                reason = report.longrepr[2]
            line = f"[SKIP] {name} -- {reason}"
        else:
            line = f"[FAIL] {name}"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tracing_ok():
    ok, why = trace.tracing_capability()
    if not ok:
        pytest.skip(f"tracing unavailable: {why} "
                    f"(yama ptrace_scope={trace.yama_ptrace_scope()})")
    return True


@pytest.fixture(scope="session")
def debugregs_ok(tracing_ok):
    ok, why = trace.debug_registers_capability()
    if not ok:
        pytest.skip(f"hardware debug registers unavailable: {why}")
    return True


@pytest.fixture(scope="session")
def demo_exe(tmp_path_factory) -> Path:
    if find_compiler() is None:
        pytest.skip("no C compiler available to build the demo target")
    return build_demo_target(tmp_path_factory.mktemp("demo-target"))


@pytest.fixture(scope="session")
def demo_image(demo_exe):
    return golden_mod.extract_from_binary(demo_exe, SECRET_SYMBOL)


@pytest.fixture(scope="session")
def demo_golden_path(demo_exe, demo_image, tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("golden") / "secret_target.golden"
    golden_mod.save(demo_image, path)
    return path


@contextmanager
def gated_target(demo_exe, *extra_flags, release_on_exit=True):
    """Run the demo target in gate mode: started, waiting on stdin."""
    proc = subprocess.Popen([str(demo_exe), "--gate", *extra_flags],
                            stdin=subprocess.PIPE, stdout=subprocess.PIPE)
    try:
        ready = proc.stdout.readline()
        assert ready.strip() == b"READY", ready
        yield proc
        if release_on_exit and proc.poll() is None:
            proc.stdin.write(b"\n")
            proc.stdin.flush()
            proc.wait(timeout=10)
    finally:
        if proc.poll() is None:
            proc.kill()
        proc.wait()


@pytest.fixture()
def python_exe() -> str:
    return sys.executable


@contextmanager
def daemon_process(socket_path, *flags):
    """Run the heal daemon as a separate OS process (its own context)."""
    import os
    import time
    proc = subprocess.Popen(
        [sys.executable, "-m", "selfheal.cli", "heal-daemon",
         "--socket", str(socket_path), *flags],
        stderr=subprocess.PIPE)
    try:
        deadline = time.time() + 15
        while not os.path.exists(socket_path):
            if proc.poll() is not None or time.time() > deadline:
                raise RuntimeError(
                    f"daemon did not come up: {proc.stderr.read().decode()}")
            time.sleep(0.01)
        yield proc
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
