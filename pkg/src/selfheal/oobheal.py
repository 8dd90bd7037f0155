"""Out-of-band healer: detect and repair a target's code from outside it.

scan_remote/heal_remote fetch and rewrite a foreign process's bytes over
the oob memory channel — never by tracing it — so a debugger attached to
the target keeps its tracer slot and its hardware write-watchpoints stay
blind to the repair.

HealDaemon exposes the same two operations over a local stream socket,
one newline-delimited request per line:

    C: HELLO v1                              S: OK v1
    C: SCAN <pid> <hex-base> <golden-path>   S: CLEAN | DIRTY <n> <off,..> | ERR <msg>
    C: HEAL <pid> <hex-base> <golden-path>   S: HEALED <n> | ERR <msg>
"""

from __future__ import annotations

import os
import socket
import threading
from collections import defaultdict
from dataclasses import dataclass

from . import golden as golden_mod
from . import trace
from .errors import (BindFailed, ProtocolError, SelfHealError, VerifyFailed)
from .golden import GoldenImage
from .healer import HealReport, _runs
from .scanner import ScanReport, diff_scan

PROTOCOL_VERSION = "v1"


def scan_remote(pid: int, base: int, golden: GoldenImage, *,
                force: bool = False) -> ScanReport:
    """diff_scan over bytes fetched through the oob channel."""
    reader = trace.oob_read_file if force else trace.oob_read
    live = reader(pid, base, golden.length)
    return diff_scan(live, golden)


def heal_remote(pid: int, base: int, golden: GoldenImage, *,
                force: bool = False) -> HealReport:
    """Rewrite every differing byte to golden via oob writes, then verify.

    Default writes go through the vm transfer call and require the target
    to have made its own pages writable (its unprotect step). force=True
    writes through the privileged memory file, ignoring page protections.
    """
    reader = trace.oob_read_file if force else trace.oob_read
    live = reader(pid, base, golden.length)
    report = diff_scan(live, golden)
    if report.clean:
        return HealReport((), 0, permissions_restored=True)
    offsets = report.dirty_offsets
    for lo, hi in _runs(offsets):
        trace.oob_write(pid, base + lo, golden.data[lo:hi], force=force)
    verify = diff_scan(reader(pid, base, golden.length), golden)
    if not verify.clean:
        raise VerifyFailed(
            f"pid {pid} region {base:#x} still dirty at {verify.dirty_offsets}")
    return HealReport(offsets, len(offsets), permissions_restored=True)


@dataclass(frozen=True)
class HealRequest:
    op: str                    # "SCAN" | "HEAL"
    pid: int
    base: int
    golden_path: str


def _parse_request(line: str) -> HealRequest:
    parts = line.split()
    if len(parts) != 4 or parts[0] not in ("SCAN", "HEAL"):
        raise ProtocolError(f"bad request: {line!r}")
    op, pid_s, base_s, path = parts
    try:
        pid = int(pid_s)
        base = int(base_s, 16)
    except ValueError:
        raise ProtocolError(f"bad pid/base in: {line!r}") from None
    if pid <= 0 or base == 0:
        raise ProtocolError("pid must be > 0 and base nonzero")
    return HealRequest(op, pid, base, path)


class HealDaemon:
    """Request-driven healer on a filesystem-addressed stream socket."""

    def __init__(self, socket_path: str | os.PathLike, *, force: bool = False):
        self.socket_path = os.fspath(socket_path)
        self.force = force
        self._locks: dict[tuple[int, int], threading.Lock] = defaultdict(threading.Lock)
        self._locks_guard = threading.Lock()
        self._shutdown = threading.Event()
        self._threads: list[threading.Thread] = []
        try:
            self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            self._sock.bind(self.socket_path)
        except OSError as exc:
            raise BindFailed(f"cannot bind {self.socket_path}: {exc}") from exc
        self._sock.listen(8)
        self._sock.settimeout(0.2)

    def _region_lock(self, pid: int, base: int) -> threading.Lock:
        with self._locks_guard:
            return self._locks[(pid, base)]

    def handle_line(self, line: str) -> str:
        """One request in, one reply out (exposed for direct tests)."""
        line = line.strip()
        if line == f"HELLO {PROTOCOL_VERSION}":
            return f"OK {PROTOCOL_VERSION}"
        try:
            req = _parse_request(line)
            image = golden_mod.load(req.golden_path)
            with self._region_lock(req.pid, req.base):
                if req.op == "SCAN":
                    report = scan_remote(req.pid, req.base, image, force=self.force)
                    if report.clean:
                        return "CLEAN"
                    offs = report.dirty_offsets
                    return f"DIRTY {len(offs)} " + ",".join(str(o) for o in offs)
                heal = heal_remote(req.pid, req.base, image, force=self.force)
                return f"HEALED {heal.bytes_written}"
        except (SelfHealError, OSError) as exc:
            return f"ERR {type(exc).__name__}: {exc}"

    def _client_loop(self, conn: socket.socket) -> None:
        with conn, conn.makefile("rw", encoding="ascii", newline="\n") as stream:
            for line in stream:
                if self._shutdown.is_set():
                    break
                reply = self.handle_line(line)
                stream.write(reply + "\n")
                stream.flush()

    def serve_forever(self) -> None:
        """Accept and serve until shutdown() is called."""
        try:
            while not self._shutdown.is_set():
                try:
                    conn, _ = self._sock.accept()
                except socket.timeout:
                    continue
                t = threading.Thread(target=self._client_loop, args=(conn,), daemon=True)
                t.start()
                self._threads.append(t)
        finally:
            self._sock.close()
            try:
                os.unlink(self.socket_path)
            except OSError:
                pass

    def start(self) -> "HealDaemon":
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        self._threads.append(t)
        return self

    def shutdown(self) -> None:
        self._shutdown.set()


class HealClient:
    """Line client for the daemon protocol; replies come back parsed."""

    def __init__(self, socket_path: str | os.PathLike):
        self._sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        self._sock.connect(os.fspath(socket_path))
        self._stream = self._sock.makefile("rw", encoding="ascii", newline="\n")

    def _roundtrip(self, line: str) -> str:
        self._stream.write(line + "\n")
        self._stream.flush()
        reply = self._stream.readline()
        if not reply:
            raise ProtocolError("daemon closed the connection")
        return reply.rstrip("\n")

    def hello(self) -> None:
        reply = self._roundtrip(f"HELLO {PROTOCOL_VERSION}")
        if reply != f"OK {PROTOCOL_VERSION}":
            raise ProtocolError(f"unexpected hello reply: {reply!r}")

    def scan(self, pid: int, base: int, golden_path: str | os.PathLike) -> tuple[str, list[int]]:
        """Returns ("CLEAN", []) or ("DIRTY", offsets); raises on ERR."""
        reply = self._roundtrip(f"SCAN {pid} {base:x} {os.fspath(golden_path)}")
        if reply == "CLEAN":
            return "CLEAN", []
        if reply.startswith("DIRTY "):
            _, n, offs = reply.split(" ", 2)
            offsets = [int(o) for o in offs.split(",")] if offs else []
            if int(n) != len(offsets):
                raise ProtocolError(f"offset count mismatch in {reply!r}")
            return "DIRTY", offsets
        raise ProtocolError(reply)

    def heal(self, pid: int, base: int, golden_path: str | os.PathLike) -> int:
        """Returns the number of restored offsets; raises on ERR."""
        reply = self._roundtrip(f"HEAL {pid} {base:x} {os.fspath(golden_path)}")
        if reply.startswith("HEALED "):
            return int(reply.split(" ", 1)[1])
        raise ProtocolError(reply)

    def close(self) -> None:
        self._stream.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
