#!/usr/bin/env python3
"""The out-of-band healing scenario, end to end.

Topology: the adversary harness owns the target (plants 0xCC on the
protected function, arms a hardware write-watchpoint when the kernel
provides debug registers); the healer daemon repairs the byte from a
different process over the oob memory channel. The watchpoint never
fires, the breakpoint never executes, the target prints its ten lines
and exits 0.

Run: python3 demos/05_oob_transcript.py
"""

import tempfile
from pathlib import Path

from selfheal import Harness, HealClient, HealDaemon, extract_from_binary, save
from selfheal.demo import SECRET_SYMBOL, build_demo_target
from selfheal.elfsyms import runtime_symbol_address
from selfheal.errors import DebugRegistersUnsupported

workdir = Path(tempfile.mkdtemp(prefix="selfheal-demo05-"))
exe = build_demo_target(workdir)
image = extract_from_binary(exe, SECRET_SYMBOL)
golden_path = workdir / "secret_target.golden"
save(image, golden_path)

daemon = HealDaemon(workdir / "healer.sock").start()
harness = Harness()
try:
    pid = harness.spawn([str(exe), "--gate", "--unprotect"],
                        capture_output=True, pipe_stdin=True)
    base = runtime_symbol_address(pid, exe, SECRET_SYMBOL)
    harness.plant_int3([base])
    print(f"adversary: planted 0xCC at {SECRET_SYMBOL}+0 (0x{base:x})")
    try:
        slot = harness.set_write_watchpoint(base)
        print(f"adversary: armed write-watchpoint on 0x{base:x} (slot {slot})")
    except DebugRegistersUnsupported as exc:
        print(f"adversary: no hardware watchpoints here ({exc})")

    fut = harness.run_async()
    assert harness.stdout.readline().strip() == b"READY"

    with HealClient(daemon.socket_path) as client:
        client.hello()
        verdict, offsets = client.scan(pid, base, golden_path)
        print(f"healer: scan -> {verdict} at offsets {offsets}")
        print(f"healer: healed {client.heal(pid, base, golden_path)} byte(s)"
              " via the oob channel")

    harness.stdin.write(b"\n")
    harness.stdin.flush()
    events = fut.result(timeout=30)

    print("target output:")
    for line in harness.stdout.read().decode().splitlines():
        print("  ", line)
    print("debug events:", [e.kind for e in events])
    print("watchpoint hits:", sum(e.kind == "WatchpointHit" for e in events))
    print("target exit code:", harness.exit_code)
finally:
    harness.close()
    daemon.shutdown()
