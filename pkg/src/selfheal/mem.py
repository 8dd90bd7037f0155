"""Page-level memory utilities and region accessors.

A RegionSpec names a span of virtual memory (base, length). LocalRegion
and RemoteRegion give scan/heal code a uniform read/write view of a
protected function, whether it lives in this process or another one.
"""

from __future__ import annotations

import ctypes
import mmap
import os
from dataclasses import dataclass
from typing import Callable

from ._native import libc, errno, clear_errno
from .errors import PermissionChangeFailed

PROT_NONE = 0
PROT_READ = 0x1
PROT_WRITE = 0x2
PROT_EXEC = 0x4
PROT_RWX = PROT_READ | PROT_WRITE | PROT_EXEC

_ADDRESS_SPACE_END = 1 << 64


def page_size() -> int:
    """Platform page size, queried at runtime."""
    return os.sysconf("SC_PAGE_SIZE")


def page_start(addr: int) -> int:
    return addr & ~(page_size() - 1)


def page_span(base: int, length: int) -> tuple[int, int]:
    """(aligned start, byte span) covering every page the region touches."""
    ps = page_size()
    start = base & ~(ps - 1)
    end = (base + length + ps - 1) & ~(ps - 1)
    return start, end - start


@dataclass(frozen=True)
class RegionSpec:
    """A (runtime base address, byte length) pair naming protected code."""
    base: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("region length must be >= 1")
        if self.base < 0 or self.base + self.length > _ADDRESS_SPACE_END:
            raise ValueError("region overflows the address space")


@dataclass(frozen=True)
class MapEntry:
    start: int
    end: int
    perms: str
    path: str

    @property
    def prot(self) -> int:
        p = 0
        if "r" in self.perms:
            p |= PROT_READ
        if "w" in self.perms:
            p |= PROT_WRITE
        if "x" in self.perms:
            p |= PROT_EXEC
        return p


def read_maps(pid: int | str = "self") -> list[MapEntry]:
    entries = []
    with open(f"/proc/{pid}/maps") as f:
        for line in f:
            parts = line.split(None, 5)
            lo, hi = parts[0].split("-")
            path = parts[5].rstrip("\n") if len(parts) > 5 else ""
            entries.append(MapEntry(int(lo, 16), int(hi, 16), parts[1], path))
    return entries


def maps_in_range(start: int, span: int, pid: int | str = "self") -> list[MapEntry]:
    end = start + span
    return [m for m in read_maps(pid) if m.start < end and m.end > start]


def mprotect(addr: int, length: int, prot: int) -> None:
    clear_errno()
    if libc.mprotect(addr, length, prot) != 0:
        e = errno()
        raise PermissionChangeFailed(
            f"mprotect({addr:#x}, {length}, {prot:#x}) failed: {os.strerror(e)}")


class LocalRegion:
    """Read/write view of code in this process's own address space.

    Writes are raw stores; callers are responsible for making the pages
    writable first (the healer does this via unprotect/restore).
    """

    def __init__(self, base: int, length: int):
        self.spec = RegionSpec(base, length)

    @property
    def base(self) -> int:
        return self.spec.base

    @property
    def length(self) -> int:
        return self.spec.length

    def read(self) -> bytes:
        return ctypes.string_at(self.base, self.length)

    def write(self, offset: int, data: bytes) -> None:
        if offset < 0 or offset + len(data) > self.length:
            raise ValueError("write outside region")
        ctypes.memmove(self.base + offset, data, len(data))


class RemoteRegion:
    """Read/write view of code in another process, via the oob channel."""

    def __init__(self, pid: int, base: int, length: int, *, force: bool = False):
        from . import trace  # late import: trace pulls in nothing from mem
        self._trace = trace
        self.pid = pid
        self.spec = RegionSpec(base, length)
        self.force = force

    @property
    def base(self) -> int:
        return self.spec.base

    @property
    def length(self) -> int:
        return self.spec.length

    def read(self) -> bytes:
        return self._trace.oob_read(self.pid, self.base, self.length)

    def write(self, offset: int, data: bytes) -> None:
        if offset < 0 or offset + len(data) > self.length:
            raise ValueError("write outside region")
        self._trace.oob_write(self.pid, self.base + offset, data, force=self.force)


class ExecutableArena:
    """A private mapping for planting runnable machine code in tests/demos.

    place() copies code in and hands back a LocalRegion; by default the
    arena is then locked to r-x so it behaves like real text pages.
    """

    def __init__(self, size: int | None = None):
        self.size = size or page_size()
        try:
            self._mm = mmap.mmap(-1, self.size, prot=mmap.PROT_READ | mmap.PROT_WRITE | mmap.PROT_EXEC)
        except (OSError, ValueError) as exc:
            raise PermissionChangeFailed(f"cannot map rwx arena: {exc}") from exc
        self.base = ctypes.addressof(ctypes.c_char.from_buffer(self._mm))
        self._locked = False

    def place(self, code: bytes, offset: int = 0, *, lock: bool = True) -> LocalRegion:
        if offset + len(code) > self.size:
            raise ValueError("code does not fit in arena")
        if self._locked:
            mprotect(self.base, self.size, PROT_RWX)
            self._locked = False
        self._mm[offset:offset + len(code)] = code
        if lock:
            self.lock()
        return LocalRegion(self.base + offset, len(code))

    def lock(self) -> None:
        """Drop write permission, leaving the arena read-execute."""
        mprotect(self.base, self.size, PROT_READ | PROT_EXEC)
        self._locked = True

    def function(self, offset: int = 0, restype=ctypes.c_long) -> Callable:
        """ctypes callable for machine code previously placed at `offset`."""
        return ctypes.CFUNCTYPE(restype)(self.base + offset)

    def close(self) -> None:
        if self._mm is not None:
            self._mm.close()
            self._mm = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
