"""Healing: put a protected region's bytes back to golden, in place.

unprotect/restore_protection bracket writes to otherwise non-writable
text pages; heal() diffs live bytes against the golden image and rewrites
only what changed; guard_loop ties scan -> heal -> repeat together on a
fixed cadence.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field
from typing import Iterator, Union

from .errors import PermissionChangeFailed, VerifyFailed
from .golden import GoldenImage
from .mem import (LocalRegion, PROT_RWX, RegionSpec, RemoteRegion, maps_in_range,
                  mprotect, page_span)
from .scanner import ScanReport, diff_scan

Region = Union[LocalRegion, RemoteRegion]


@dataclass
class PagePermissionGuard:
    """Recorded pre-state of the pages overlapping a region."""
    page_start: int
    span: int
    previous: tuple[tuple[int, int, int], ...]  # (start, end, prot) per mapping
    restored: bool = False


@dataclass(frozen=True)
class HealReport:
    restored_offsets: tuple[int, ...]
    bytes_written: int
    permissions_restored: bool

    def __post_init__(self):
        assert self.bytes_written == len(self.restored_offsets)


def unprotect(region: RegionSpec) -> PagePermissionGuard:
    """Make every page the region overlaps readable, writable, executable.

    The whole overlap is covered, not just the first page, so regions
    straddling a page boundary heal correctly.
    """
    start, span = page_span(region.base, region.length)
    mappings = maps_in_range(start, span)
    covered = start
    previous = []
    for m in sorted(mappings, key=lambda m: m.start):
        if m.start > covered:
            break
        lo, hi = max(m.start, start), min(m.end, start + span)
        previous.append((lo, hi, m.prot))
        covered = hi
    if covered < start + span or not previous:
        raise PermissionChangeFailed(
            f"region {region.base:#x}+{region.length} is not fully mapped")
    mprotect(start, span, PROT_RWX)
    return PagePermissionGuard(start, span, tuple(previous))


def restore_protection(guard: PagePermissionGuard) -> bool:
    """Put the recorded permissions back; a second call is a no-op."""
    if guard.restored:
        return True
    for lo, hi, prot in guard.previous:
        mprotect(lo, hi - lo, prot)
    guard.restored = True
    return True


def heal(region: Region, golden: GoldenImage, *, keep_rwx: bool = False) -> HealReport:
    """Rewrite every byte that differs from golden; verify the result.

    For a LocalRegion the pages are unprotected first and their original
    permissions restored afterwards unless keep_rwx is set. Remote
    regions are written through the out-of-band channel as-is (the target
    owns its own page permissions).
    """
    live = region.read()
    report = diff_scan(live, golden)
    if report.clean:
        return HealReport((), 0, permissions_restored=not keep_rwx)

    offsets = report.dirty_offsets
    manage = isinstance(region, LocalRegion)
    guard = unprotect(region.spec) if manage else None
    try:
        for lo, hi in _runs(offsets):
            region.write(lo, golden.data[lo:hi])
    finally:
        restored = False
        if guard is not None and not keep_rwx:
            restored = restore_protection(guard)

    if diff_scan(region.read(), golden).clean is False:
        raise VerifyFailed(f"region {region.spec.base:#x} still dirty after heal")
    if not manage:
        restored = True  # nothing to restore: permissions were never touched
    return HealReport(offsets, len(offsets), permissions_restored=restored)


def _runs(offsets: tuple[int, ...]) -> Iterator[tuple[int, int]]:
    """Collapse sorted offsets into contiguous [lo, hi) runs."""
    i = 0
    while i < len(offsets):
        j = i
        while j + 1 < len(offsets) and offsets[j + 1] == offsets[j] + 1:
            j += 1
        yield offsets[i], offsets[j] + 1
        i = j + 1


class GuardAction(enum.Enum):
    HEAL = "heal"
    REPORT = "report"
    TERMINATE = "terminate"


@dataclass(frozen=True)
class GuardPolicy:
    action: GuardAction = GuardAction.HEAL
    period_s: float = 0.05
    terminate_status: int = 3
    keep_rwx: bool = False


@dataclass(frozen=True)
class GuardEvent:
    kind: str  # "scan" | "heal" | "terminate"
    tick: int
    scan: ScanReport | None = None
    heal: HealReport | None = None
    timestamp_ns: int = field(default_factory=time.monotonic_ns)


def guard_loop(region: Region, golden: GoldenImage, policy: GuardPolicy,
               stop: threading.Event | None = None,
               max_ticks: int | None = None) -> Iterator[GuardEvent]:
    """Scan `region` every policy.period_s and act on non-clean reports.

    Yields a scan event per tick; a heal event follows whenever bytes had
    to be rewritten under the HEAL action. Under TERMINATE a terminate
    event is yielded and the stream ends; the driver decides how to exit.
    """
    tick = 0
    while not (stop and stop.is_set()) and (max_ticks is None or tick < max_ticks):
        tick += 1
        report = diff_scan(region.read(), golden)
        yield GuardEvent("scan", tick, scan=report)
        if not report.clean:
            if policy.action is GuardAction.HEAL:
                hr = heal(region, golden, keep_rwx=policy.keep_rwx)
                yield GuardEvent("heal", tick, heal=hr)
            elif policy.action is GuardAction.TERMINATE:
                yield GuardEvent("terminate", tick, scan=report)
                return
        if stop:
            if stop.wait(policy.period_s):
                return
        else:
            time.sleep(policy.period_s)


class GuardThread:
    """Run guard_loop on a dedicated thread inside the protected process."""

    def __init__(self, region: Region, golden: GoldenImage, policy: GuardPolicy):
        self._stop = threading.Event()
        self.events: list[GuardEvent] = []
        self._thread = threading.Thread(
            target=self._run, args=(region, golden, policy), daemon=True)

    def _run(self, region, golden, policy):
        for event in guard_loop(region, golden, policy, stop=self._stop):
            self.events.append(event)

    def start(self) -> "GuardThread":
        self._thread.start()
        return self

    def stop(self, timeout: float = 5.0) -> list[GuardEvent]:
        self._stop.set()
        self._thread.join(timeout)
        return self.events
