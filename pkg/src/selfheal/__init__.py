"""selfheal: code-integrity and anti-debugging toolkit.

Detects software breakpoints, hardware breakpoints, and arbitrary patches
in a protected function, and heals the code in place — from inside the
process or from an out-of-band healer whose writes evade hardware
write-watchpoints.
"""

from .crc import crc32, crc32_fold, generate_crc_table
from .golden import GoldenImage, bake, extract_from_binary, load, parse, save, serialize
from .harness import DebugEvent, Harness, HarnessPolicy, read_event_log, write_event_log
from .healer import (GuardAction, GuardPolicy, GuardThread, HealReport,
                     PagePermissionGuard, guard_loop, heal, restore_protection,
                     unprotect)
from .mem import ExecutableArena, LocalRegion, RegionSpec, RemoteRegion
from .oobheal import HealClient, HealDaemon, heal_remote, scan_remote
from .scanner import (ProbeOutcome, ScanReport, diff_scan, is_function_patched,
                      probe_guard_page, scan_int3)
from .trace import TraceSession, attach, oob_read, oob_write, spawn_traced

__version__ = "0.1.0"

__all__ = [
    "crc32", "crc32_fold", "generate_crc_table",
    "GoldenImage", "bake", "serialize", "parse", "save", "load", "extract_from_binary",
    "ScanReport", "scan_int3", "is_function_patched", "diff_scan",
    "ProbeOutcome", "probe_guard_page",
    "PagePermissionGuard", "HealReport", "unprotect", "heal", "restore_protection",
    "GuardAction", "GuardPolicy", "GuardThread", "guard_loop",
    "RegionSpec", "LocalRegion", "RemoteRegion", "ExecutableArena",
    "TraceSession", "attach", "spawn_traced", "oob_read", "oob_write",
    "Harness", "HarnessPolicy", "DebugEvent", "read_event_log", "write_event_log",
    "HealDaemon", "HealClient", "scan_remote", "heal_remote",
]
