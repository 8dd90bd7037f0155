#!/usr/bin/env python3
"""In-process self-healing: plant a breakpoint in live code, heal, execute.

Machine code is placed in an executable arena inside *this* process; a
guard thread detects the plant and puts the golden bytes back, handling
the page-permission dance along the way.

Run: python3 demos/03_inprocess_selfheal.py
"""

import time

from selfheal import (ExecutableArena, GuardPolicy, GuardThread, bake,
                      diff_scan, heal, restore_protection, unprotect)

code = bytes([0xB8, 0x2A, 0x00, 0x00, 0x00, 0xC3])  # mov eax, 42; ret

with ExecutableArena() as arena:
    region = arena.place(code)          # pages are now r-x, like real text
    golden = bake(code, "mov42")
    fn = arena.function()
    print("clean call returns:", fn())

    # --- manual heal -------------------------------------------------
    guard = unprotect(region.spec)      # pages rwx, previous perms recorded
    region.write(0, b"\xcc")            # the adversary's int3
    restore_protection(guard)
    print("after plant, diff_scan:", diff_scan(region.read(), golden))

    report = heal(region, golden)
    print("heal restored offsets", list(report.restored_offsets),
          "| permissions restored:", report.permissions_restored)
    print("healed call returns:", fn())

    # --- guard thread ------------------------------------------------
    watchdog = GuardThread(region, golden, GuardPolicy(period_s=0.01)).start()
    pg = unprotect(region.spec)
    region.write(1, b"\x07")            # patch the immediate: would return 7
    restore_protection(pg)
    time.sleep(0.1)                     # a couple of guard ticks
    events = watchdog.stop()
    heals = [e for e in events if e.kind == "heal"]
    print(f"guard thread ran {events[-1].tick} ticks, healed {len(heals)} time(s)")
    print("call after guard heal returns:", fn())
