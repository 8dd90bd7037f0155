"""Detection: software breakpoints, arbitrary patches, guard-page probing.

scan_int3 is the bare 0xCC sweep; diff_scan classifies every deviation
from the golden bytes; is_function_patched is the checksum-only variant.
probe_guard_page detects a debugger that intercepts access faults the
process should be fielding itself.
"""

from __future__ import annotations

import ctypes
import enum
import mmap
import os
import signal
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable

from ._native import libc, sigaction_t
from .crc import crc32
from .errors import (AllocationFailed, HandlerInstallFailed, LengthMismatch,
                     OffsetOutOfRange, PermissionChangeFailed)
from .golden import GoldenImage

INT3 = 0xCC
RET = 0xC3


@dataclass(frozen=True)
class ScanReport:
    """Classified findings from one pass over a region's live bytes."""
    int3_offsets: tuple[int, ...]
    patch_offsets: tuple[int, ...]
    computed_checksum: int
    clean: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "clean",
                           not self.int3_offsets and not self.patch_offsets)

    @property
    def dirty_offsets(self) -> tuple[int, ...]:
        return tuple(sorted(self.int3_offsets + self.patch_offsets))


def scan_int3(live: bytes, offsets: Iterable[int]) -> bool:
    """True iff any listed offset holds the one-byte trap opcode 0xCC.

    Deliberately does not consult golden bytes: a legitimate 0xCC operand
    byte at a listed offset will report true.
    """
    n = len(live)
    for off in offsets:
        if not 0 <= off < n:
            raise OffsetOutOfRange(off, n)
        if live[off] == INT3:
            return True
    return False


def is_function_patched(live: bytes, known_checksum: int) -> bool:
    """True iff the live bytes no longer hash to the known-good CRC-32."""
    return crc32(live) != known_checksum


def diff_scan(live: bytes, golden: GoldenImage) -> ScanReport:
    """Classify every offset where live bytes differ from golden bytes."""
    if len(live) != golden.length:
        raise LengthMismatch(f"live {len(live)} bytes vs golden {golden.length}")
    int3s, patches = [], []
    for i, (have, want) in enumerate(zip(live, golden.data)):
        if have == want:
            continue
        (int3s if have == INT3 else patches).append(i)
    return ScanReport(tuple(int3s), tuple(patches), crc32(live))


class ProbeOutcome(enum.Enum):
    """Verdict of the guard-page probe."""
    HANDLER_RAN = "HandlerRan"
    INCONCLUSIVE = "Inconclusive"


# mutates process-global signal state; at most one probe in flight
_probe_lock = threading.Lock()
_last_probe_pages: list[tuple[int, int]] = []  # (addr, size) of the latest probe, for tests


def _recovery_stub(flag_addr: int, page_addr: int, page_len: int) -> bytes:
    """x86-64 fault handler: set the flag byte, re-enable the probe page.

    mov byte [flag], 1; then the raw mprotect syscall restores rwx on the
    page so the interrupted execution can resume and hit the ret.
    """
    def movabs(opcode: bytes, imm: int) -> bytes:
        return opcode + struct.pack("<Q", imm)

    return b"".join([
        movabs(b"\x48\xb8", flag_addr),   # movabs rax, flag_addr
        b"\xc6\x00\x01",                  # mov byte [rax], 1
        movabs(b"\x48\xbf", page_addr),   # movabs rdi, page_addr
        movabs(b"\x48\xbe", page_len),    # movabs rsi, page_len
        b"\xba\x07\x00\x00\x00",          # mov edx, PROT_READ|WRITE|EXEC
        b"\xb8\x0a\x00\x00\x00",          # mov eax, __NR_mprotect
        b"\x0f\x05",                      # syscall
        b"\xc3",                          # ret
    ])


def probe_guard_page(timeout: float = 2.0) -> ProbeOutcome:
    """Execute a deliberately access-revoked page and see who fields the fault.

    A page is mapped, a single ret opcode written at its start, all
    permissions revoked, and a forked probe child jumps to it with a
    recovery handler installed. If our own handler observes the fault the
    verdict is HANDLER_RAN. If the child cannot be confirmed to recover
    within `timeout` (a tracer swallowed or intercepted the fault), the
    verdict is INCONCLUSIVE. The probe pages are always unmapped before
    returning.
    """
    with _probe_lock:
        return _probe_guard_page_locked(timeout)


def _probe_guard_page_locked(timeout: float) -> ProbeOutcome:
    ps = os.sysconf("SC_PAGE_SIZE")
    rwx = mmap.PROT_READ | mmap.PROT_WRITE | mmap.PROT_EXEC
    try:
        flag_mm = mmap.mmap(-1, ps, flags=mmap.MAP_SHARED | mmap.MAP_ANONYMOUS,
                            prot=mmap.PROT_READ | mmap.PROT_WRITE)
        probe_mm = mmap.mmap(-1, ps, prot=rwx)
        stub_mm = mmap.mmap(-1, ps, prot=rwx)
    except (OSError, ValueError) as exc:
        raise AllocationFailed(f"probe page allocation failed: {exc}") from exc

    maps = [flag_mm, probe_mm, stub_mm]
    try:
        flag_addr = ctypes.addressof(ctypes.c_char.from_buffer(flag_mm))
        probe_addr = ctypes.addressof(ctypes.c_char.from_buffer(probe_mm))
        stub_addr = ctypes.addressof(ctypes.c_char.from_buffer(stub_mm))
        _last_probe_pages[:] = [(flag_addr, ps), (probe_addr, ps), (stub_addr, ps)]

        probe_mm[0] = RET
        stub = _recovery_stub(flag_addr, probe_addr, ps)
        stub_mm[:len(stub)] = stub

        # everything the child touches is prepared before fork
        act = sigaction_t()
        act.sa_handler = stub_addr
        act.sa_flags = 0
        probe_fn = ctypes.CFUNCTYPE(None)(probe_addr)

        pid = os.fork()
        if pid == 0:
            code = 86
            try:
                if libc.sigaction(signal.SIGSEGV, ctypes.byref(act), None) != 0:
                    os._exit(81)
                if libc.mprotect(probe_addr, ps, 0) != 0:
                    os._exit(82)
                probe_fn()
                code = 0
            finally:
                os._exit(code)

        deadline = time.monotonic() + timeout
        status = None
        while True:
            wpid, status = os.waitpid(pid, os.WNOHANG)
            if wpid:
                break
            if time.monotonic() > deadline:
                os.kill(pid, signal.SIGKILL)
                os.waitpid(pid, 0)
                return ProbeOutcome.INCONCLUSIVE
            time.sleep(0.005)

        if os.WIFEXITED(status):
            code = os.WEXITSTATUS(status)
            if code == 81:
                raise HandlerInstallFailed("sigaction failed in probe child")
            if code == 82:
                raise PermissionChangeFailed("probe child could not revoke page access")
            if code == 0 and flag_mm[0] == 1:
                return ProbeOutcome.HANDLER_RAN
        return ProbeOutcome.INCONCLUSIVE
    finally:
        for m in maps:
            try:
                m.close()
            except BufferError:  # pragma: no cover - exported buffer still alive
                pass
