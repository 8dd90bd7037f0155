"""Deterministic debugger stand-in for tests and demos.

The harness plays the adversary: it plants software breakpoints, programs
hardware write-watchpoints, patches bytes, then runs the target to exit
while recording every observable debug event. Guards and healers never
depend on it at runtime; it exists so the evasion claims can be asserted.

All trace calls are confined to one internal worker thread per harness
(the OS requires trace requests to come from the attaching thread).
"""

from __future__ import annotations

import os
import queue
import re
import signal
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass
from typing import IO, Iterable

from . import trace
from .errors import (DebugRegistersUnsupported, NoFreeSlot, TraceError,
                     TraceeKilled)
from .trace import (PTRACE_O_EXITKILL, PTRACE_O_TRACECLONE, PTRACE_O_TRACEFORK,
                    PTRACE_O_TRACEVFORK, PTRACE_EVENT_EXEC, PTRACE_EVENT_FORK,
                    PTRACE_EVENT_CLONE, PTRACE_EVENT_VFORK, TRAP_HWBKPT,
                    TRAP_TRACE, TraceSession, WALL, dr7_slot_enabled,
                    dr7_write_watch_bits)

INT3_BYTE = 0xCC

EVENT_KINDS = ("Int3Hit", "WatchpointHit", "SignalForwarded", "Exit")


@dataclass(frozen=True)
class DebugEvent:
    kind: str
    address: int | None = None
    timestamp_ns: int = 0
    status: int | None = None   # Exit only
    slot: int | None = None     # WatchpointHit only
    signum: int | None = None   # SignalForwarded only

    def format(self) -> str:
        kind = f"Exit({self.status})" if self.kind == "Exit" else self.kind
        addr = f"0x{self.address:x}" if self.address is not None else "-"
        return f"EVENT {kind} {addr} {self.timestamp_ns}"


_EVENT_RE = re.compile(
    r"^EVENT (Int3Hit|WatchpointHit|SignalForwarded|Exit\((\d+)\)) (0x[0-9a-f]+|-) (\d+)$")


def parse_event(line: str) -> DebugEvent:
    m = _EVENT_RE.match(line.strip())
    if not m:
        raise ValueError(f"bad event line: {line!r}")
    kind, status, addr, ts = m.groups()
    if kind.startswith("Exit("):
        return DebugEvent("Exit", None, int(ts), status=int(status))
    return DebugEvent(kind, None if addr == "-" else int(addr, 16), int(ts))


def write_event_log(events: Iterable[DebugEvent], dest: str | os.PathLike | IO[str]) -> None:
    if hasattr(dest, "write"):
        for e in events:
            dest.write(e.format() + "\n")
    else:
        with open(dest, "w") as f:
            write_event_log(events, f)


def read_event_log(src: str | os.PathLike | IO[str]) -> list[DebugEvent]:
    if hasattr(src, "read"):
        return [parse_event(line) for line in src if line.strip()]
    with open(src) as f:
        return read_event_log(f)


@dataclass(frozen=True)
class HarnessPolicy:
    """What the adversary does at each stop."""
    step_over_int3: bool = True
    follow_forks: bool = False
    swallow_signals: frozenset[int] = frozenset()


class _Worker:
    """Single thread that owns every trace call for one harness."""

    def __init__(self):
        self._q: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self):
        while True:
            item = self._q.get()
            if item is None:
                return
            fn, args, fut = item
            try:
                fut.set_result(fn(*args))
            except BaseException as exc:
                fut.set_exception(exc)

    def submit(self, fn, *args) -> Future:
        fut: Future = Future()
        self._q.put((fn, args, fut))
        return fut

    def call(self, fn, *args):
        return self.submit(fn, *args).result()

    def close(self):
        self._q.put(None)
        self._thread.join(timeout=5)


class Harness:
    """Adversary controller for one traced target process."""

    def __init__(self, policy: HarnessPolicy | None = None):
        self.policy = policy or HarnessPolicy()
        self.events: list[DebugEvent] = []
        self.exit_code: int | None = None
        self._worker = _Worker()
        self._session: TraceSession | None = None
        self._sessions: dict[int, TraceSession] = {}
        self._planted: dict[int, int] = {}
        self._replant: dict[int, int] = {}  # pid -> addr awaiting re-plant after step
        self._watch_slots: dict[int, int] = {}
        self._seen: set[int] = set()
        self._running = False

    # --- lifecycle ---

    def spawn(self, argv: list[str], *, capture_output: bool = False,
              pipe_stdin: bool = False) -> int:
        """Start argv traced and stopped; returns its pid."""
        return self._worker.call(self._spawn, argv, capture_output, pipe_stdin)

    def _spawn(self, argv, capture_output, pipe_stdin):
        session = trace.spawn_traced(argv, capture_output=capture_output,
                                     pipe_stdin=pipe_stdin)
        options = PTRACE_O_EXITKILL
        if self.policy.follow_forks:
            options |= PTRACE_O_TRACEFORK | PTRACE_O_TRACEVFORK | PTRACE_O_TRACECLONE
        session.set_options(options)
        self._session = session
        self._sessions[session.pid] = session
        self._seen.add(session.pid)
        return session.pid

    def attach(self, pid: int) -> int:
        def _do():
            session = trace.attach(pid)
            self._session = session
            self._sessions[pid] = session
            self._seen.add(pid)
            return pid
        return self._worker.call(_do)

    @property
    def pid(self) -> int:
        assert self._session is not None
        return self._session.pid

    @property
    def stdout(self):
        return self._session.popen.stdout if self._session and self._session.popen else None

    @property
    def stdin(self):
        return self._session.popen.stdin if self._session and self._session.popen else None

    def kill(self) -> None:
        """Hard-stop the target from any thread (unblocks a running loop)."""
        if self._session is not None and self._session.exit_status is None:
            try:
                os.kill(self._session.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass

    def close(self) -> None:
        try:
            if self._session is not None and self._session.exit_status is None:
                self.kill()
                if not self._running:
                    self._worker.call(self._session.kill)
        finally:
            self._worker.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # --- attacks (target must be stopped) ---

    def plant_int3(self, addresses: list[int]) -> dict[int, int]:
        """Overwrite each address's byte with 0xCC via the tracing write path.

        Returns {address: original byte} for later restoration.
        """
        return self._worker.call(self._plant_int3, list(addresses))

    def _plant_int3(self, addresses):
        session = self._session
        saved = {}
        for addr in addresses:
            orig = session.read_mem(addr, 1)[0]
            session.write_mem(addr, bytes([INT3_BYTE]))
            saved[addr] = orig
            self._planted[addr] = orig
        return saved

    def patch_bytes(self, addr: int, data: bytes) -> None:
        """Arbitrary patch via the tracing write path."""
        self._worker.call(self._session.write_mem, addr, data)

    def read_bytes(self, addr: int, length: int) -> bytes:
        return self._worker.call(self._session.read_mem, addr, length)

    def set_write_watchpoint(self, addr: int) -> int:
        """Program a free debug-register slot as a 1-byte write watchpoint."""
        return self._worker.call(self._set_write_watchpoint, addr)

    def _set_write_watchpoint(self, addr):
        session = self._session
        dr7 = session.read_debug_register(7)
        slot = next((s for s in range(4)
                     if s not in self._watch_slots and not dr7_slot_enabled(dr7, s)),
                    None)
        if slot is None:
            raise NoFreeSlot("all four watchpoint slots are in use")
        session.write_debug_register(slot, addr)
        if session.read_debug_register(slot) != addr:
            raise DebugRegistersUnsupported(
                "debug-register write did not stick; hardware watchpoints "
                "are unavailable on this kernel/sandbox")
        session.write_debug_register(7, dr7 | dr7_write_watch_bits(slot))
        self._watch_slots[slot] = addr
        return slot

    def clear_hw_breakpoints(self) -> None:
        self._worker.call(self._session.clear_hw_breakpoints)
        self._watch_slots.clear()

    def read_debug_register(self, index: int) -> int:
        return self._worker.call(self._session.read_debug_register, index)

    def write_debug_register(self, index: int, value: int) -> None:
        self._worker.call(self._session.write_debug_register, index, value)

    def hw_breakpoint_present(self, base: int, offsets: list[int]) -> bool:
        return self._worker.call(self._session.hw_breakpoint_present, base, list(offsets))

    # --- run loop ---

    def run_async(self) -> Future:
        """Resume the target and process debug stops until it exits."""
        self._running = True
        return self._worker.submit(self._run)

    def run_until_exit(self) -> list[DebugEvent]:
        return self.run_async().result()

    def _log(self, kind: str, *, address: int | None = None, status: int | None = None,
             slot: int | None = None, signum: int | None = None) -> None:
        self.events.append(DebugEvent(kind, address, time.monotonic_ns(),
                                      status=status, slot=slot, signum=signum))

    def _session_for(self, pid: int) -> TraceSession:
        session = self._sessions.get(pid)
        if session is None:
            session = TraceSession(pid)
            self._sessions[pid] = session
        return session

    def _run(self) -> list[DebugEvent]:
        main_pid = self._session.pid
        self._session.cont()
        tracees = {main_pid}
        try:
            while tracees:
                wpid, status = self._wait_any(tracees)
                if wpid is None:
                    continue
                try:
                    done = self._handle_stop(wpid, status, main_pid, tracees)
                except TraceError:
                    # tolerate a tracee dying mid-handling (harness.kill()
                    # races the loop); its exit event is still coming
                    try:
                        os.kill(wpid, 0)
                    except ProcessLookupError:
                        continue
                    raise
                if done:
                    break
        finally:
            self._running = False
            for pid in tracees - {main_pid}:
                try:
                    os.kill(pid, signal.SIGKILL)
                    os.waitpid(pid, WALL)
                except (OSError, ChildProcessError):
                    pass
        if self.exit_code is None:
            sig = os.WTERMSIG(self._session.exit_status or 0)
            raise TraceeKilled(sig)
        return list(self.events)

    def _wait_any(self, tracees: set[int]) -> tuple[int | None, int]:
        # Targeted waits only: waitpid(-1) could steal exits from unrelated
        # children of this process (other Popen objects in the same program).
        if len(tracees) == 1:
            pid = next(iter(tracees))
            try:
                return os.waitpid(pid, WALL)
            except ChildProcessError:
                tracees.discard(pid)
                return None, 0
        for pid in list(tracees):
            try:
                wpid, status = os.waitpid(pid, os.WNOHANG | WALL)
            except ChildProcessError:
                tracees.discard(pid)
                continue
            if wpid:
                return wpid, status
        time.sleep(0.002)
        return None, 0

    def _handle_stop(self, pid: int, status: int, main_pid: int,
                     tracees: set[int]) -> bool:
        session = self._session_for(pid)
        if os.WIFEXITED(status) or os.WIFSIGNALED(status):
            session.attached = False
            session.stopped = False
            session.exit_status = status
            if session.popen is not None and session.popen.returncode is None:
                session.popen.returncode = (os.WEXITSTATUS(status) if os.WIFEXITED(status)
                                            else -os.WTERMSIG(status))
            tracees.discard(pid)
            if pid == main_pid:
                if os.WIFEXITED(status):
                    self.exit_code = os.WEXITSTATUS(status)
                    self._log("Exit", status=self.exit_code)
                return True
            return False

        session.stopped = True
        sig = os.WSTOPSIG(status)
        event = status >> 16

        first_time = pid not in self._seen
        self._seen.add(pid)

        if event in (PTRACE_EVENT_FORK, PTRACE_EVENT_VFORK, PTRACE_EVENT_CLONE):
            child = session.event_msg()
            tracees.add(child)
            session.cont()
            return False
        if event == PTRACE_EVENT_EXEC:
            session.cont()
            return False

        if sig == signal.SIGTRAP:
            self._handle_sigtrap(session)
            return False

        if first_time and sig == signal.SIGSTOP:
            # auto-attach stop of a newly followed child
            session.cont()
            return False

        if sig in self.policy.swallow_signals:
            session.cont(0)
            return False

        self._log("SignalForwarded", signum=sig)
        session.cont(sig)
        return False

    def _handle_sigtrap(self, session: TraceSession) -> None:
        code = None
        try:
            code = session.siginfo_code()
        except TraceError:
            pass

        if code == TRAP_TRACE and session.pid in self._replant:
            addr = self._replant.pop(session.pid)
            # only replant if the byte is still the original: a healer racing
            # us has priority over the adversary's bookkeeping
            if session.read_mem(addr, 1)[0] == self._planted.get(addr):
                session.write_mem(addr, bytes([INT3_BYTE]))
            session.cont()
            return

        if code == TRAP_HWBKPT:
            self._watchpoint_hit(session)
            return
        # distinguish by the watchpoint status word when si_code is ambiguous
        if self._watch_slots:
            try:
                dr6 = session.read_debug_register(6)
            except TraceError:
                dr6 = 0
            if dr6 & 0xF:
                self._watchpoint_hit(session, dr6)
                return

        if code != TRAP_TRACE:
            addr = session.rip - 1
            if addr in self._planted:
                self._int3_hit(session, addr)
                return
        session.cont()  # stray trap (exec stop, leftover step): suppress

    def _watchpoint_hit(self, session: TraceSession, dr6: int | None = None) -> None:
        if dr6 is None:
            try:
                dr6 = session.read_debug_register(6)
            except TraceError:
                dr6 = 0
        slot = next((s for s in range(4) if dr6 & (1 << s)), None)
        if slot is None:
            slot = next(iter(self._watch_slots), 0)
        addr = self._watch_slots.get(slot)
        if addr is None:
            try:
                addr = session.read_debug_register(slot)
            except TraceError:
                addr = None
        self._log("WatchpointHit", address=addr, slot=slot)
        try:
            session.write_debug_register(6, 0)
        except TraceError:
            pass
        session.cont()

    def _int3_hit(self, session: TraceSession, addr: int) -> None:
        self._log("Int3Hit", address=addr)
        original = self._planted[addr]
        session.write_mem(addr, bytes([original]))
        session.rip = addr
        if not self.policy.step_over_int3:
            del self._planted[addr]  # breakpoint removed for good
            session.cont()
            return
        self._replant[session.pid] = addr
        session.singlestep()
