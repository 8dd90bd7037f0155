"""Operator command line.

Exit codes: 0 success, 1 operational failure, 2 usage error. Status lines
go to standard error; machine-readable output goes to files or stdout.
"""

from __future__ import annotations

import argparse
import shlex
import signal
import subprocess
import sys
import tempfile
import threading
import time
from pathlib import Path

from . import golden as golden_mod
from . import demo as demo_mod
from .elfsyms import runtime_symbol_address
from .errors import DebugRegistersUnsupported, NoSuchProcess, SelfHealError
from .harness import Harness, HarnessPolicy, write_event_log
from .healer import GuardAction, GuardPolicy, guard_loop
from .mem import RemoteRegion
from .oobheal import HealClient, HealDaemon


def _status(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_bake(args) -> int:
    try:
        image = golden_mod.extract_from_binary(args.binary, args.symbol, args.length)
        golden_mod.save(image, args.out)
    except (SelfHealError, OSError) as exc:
        _status(f"bake: {type(exc).__name__}: {exc}")
        return 1
    _status(f"bake: wrote {args.out} ({image.length} bytes, crc {image.checksum:08x})")
    return 0


def _parse_offsets(spec: str) -> list[int]:
    return [int(p) for p in spec.split(",") if p != ""]


def cmd_attack(args) -> int:
    argv = shlex.split(args.target)
    try:
        image = golden_mod.load(args.golden)
    except (SelfHealError, OSError) as exc:
        _status(f"attack: {type(exc).__name__}: {exc}")
        return 1

    harness = Harness(HarnessPolicy(step_over_int3=True))
    try:
        pid = harness.spawn(argv)
        base = runtime_symbol_address(pid, argv[0], image.symbol)
        _status(f"attack: pid={pid} {image.symbol}@0x{base:x}")
        if args.int3:
            offsets = _parse_offsets(args.int3)
            harness.plant_int3([base + off for off in offsets])
            _status(f"attack: planted int3 at offsets {offsets}")
        for off in args.watch or []:
            slot = harness.set_write_watchpoint(base + off)
            _status(f"attack: write watchpoint on offset {off} (slot {slot})")
        for patch in args.patch or []:
            off_s, _, hexpart = patch.partition("=")
            harness.patch_bytes(base + int(off_s), bytes.fromhex(hexpart))
            _status(f"attack: patched offset {off_s} with {hexpart}")
        events = harness.run_until_exit()
        write_event_log(events, args.events)
        _status(f"attack: target exited {harness.exit_code}; "
                f"{len(events)} events -> {args.events}")
        return harness.exit_code if harness.exit_code is not None else 1
    except (SelfHealError, OSError, ValueError) as exc:
        _status(f"attack: {type(exc).__name__}: {exc}")
        return 1
    finally:
        harness.close()


def cmd_guard(args) -> int:
    cmdline = list(args.cmdline)
    if cmdline and cmdline[0] == "--":
        cmdline = cmdline[1:]
    if not cmdline:
        _status("guard: no target command line given")
        return 2
    try:
        image = golden_mod.load(args.golden)
    except (SelfHealError, OSError) as exc:
        _status(f"guard: {type(exc).__name__}: {exc}")
        return 1

    child = subprocess.Popen(cmdline)
    try:
        base = runtime_symbol_address(child.pid, cmdline[0], image.symbol)
    except (SelfHealError, OSError) as exc:
        _status(f"guard: cannot resolve {image.symbol}: {exc}")
        child.kill()
        child.wait()
        return 1
    _status(f"guard: pid={child.pid} {image.symbol}@0x{base:x} "
            f"policy={args.policy} period={args.period_ms}ms")

    region = RemoteRegion(child.pid, base, image.length, force=args.force_mem)
    policy = GuardPolicy(action=GuardAction(args.policy),
                         period_s=args.period_ms / 1000.0,
                         terminate_status=args.terminate_status)
    stop = threading.Event()

    def watch_child():
        child.wait()
        stop.set()

    threading.Thread(target=watch_child, daemon=True).start()

    terminate = False
    try:
        for event in guard_loop(region, image, policy, stop=stop):
            if event.kind == "scan":
                if event.scan.clean:
                    _status(f"guard: tick={event.tick} clean")
                else:
                    _status(f"guard: tick={event.tick} int3={list(event.scan.int3_offsets)} "
                            f"patch={list(event.scan.patch_offsets)}")
            elif event.kind == "heal":
                _status(f"guard: healed {event.heal.bytes_written} offsets")
            elif event.kind == "terminate":
                _status(f"guard: breakpoint detected, terminating target")
                terminate = True
                break
    except NoSuchProcess:
        pass
    except SelfHealError as exc:
        _status(f"guard: {type(exc).__name__}: {exc}")
        child.kill()
        child.wait()
        return 1

    if terminate:
        child.kill()
        child.wait()
        _status(f"guard: exit code={policy.terminate_status}")
        return policy.terminate_status
    code = child.wait()
    _status(f"guard: target exited {code}")
    return code


def cmd_heal_daemon(args) -> int:
    try:
        daemon = HealDaemon(args.socket, force=args.force_mem)
    except SelfHealError as exc:
        _status(f"heal-daemon: {type(exc).__name__}: {exc}")
        return 1
    _status(f"heal-daemon: listening on {args.socket}" +
            (" (forced memory-file writes)" if args.force_mem else ""))

    def stop(signum, frame):
        daemon.shutdown()

    signal.signal(signal.SIGTERM, stop)
    signal.signal(signal.SIGINT, stop)
    daemon.serve_forever()
    _status("heal-daemon: shut down")
    return 0


def _spawn_daemon_process(socket_path: Path) -> subprocess.Popen:
    """Heal daemon in its own process, so the repair writes come from a
    context that is neither the target nor its tracer."""
    proc = subprocess.Popen(
        [sys.executable, "-m", "selfheal.cli", "heal-daemon", "--socket",
         str(socket_path)],
        stderr=subprocess.DEVNULL)
    deadline = time.monotonic() + 15
    while not socket_path.exists():
        if proc.poll() is not None or time.monotonic() > deadline:
            proc.kill()
            raise SelfHealError("heal daemon did not come up")
        time.sleep(0.01)
    return proc


def _demo_transcript(args) -> int:
    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="selfheal-demo-"))
    workdir.mkdir(parents=True, exist_ok=True)
    _status(f"demo: workdir {workdir}")

    exe = demo_mod.build_demo_target(workdir)
    image = golden_mod.extract_from_binary(exe, demo_mod.SECRET_SYMBOL)
    golden_path = workdir / "secret_target.golden"
    golden_mod.save(image, golden_path)
    _status(f"demo: baked {golden_path.name} ({image.length} bytes)")

    socket_path = workdir / "healer.sock"
    daemon = _spawn_daemon_process(socket_path)
    harness = Harness()
    try:
        pid = harness.spawn([str(exe), "--gate", "--unprotect"],
                            capture_output=True, pipe_stdin=True)
        base = runtime_symbol_address(pid, exe, demo_mod.SECRET_SYMBOL)
        harness.plant_int3([base])
        _status(f"demo: adversary planted 0xCC at {demo_mod.SECRET_SYMBOL}+0 (0x{base:x})")
        try:
            harness.set_write_watchpoint(base)
            _status("demo: adversary armed a hardware write-watchpoint on that byte")
            watching = True
        except DebugRegistersUnsupported as exc:
            _status(f"demo: watchpoint unavailable here ({exc}); continuing without")
            watching = False

        fut = harness.run_async()
        line = harness.stdout.readline().decode()
        if line.strip() != "READY":
            _status(f"demo: unexpected target output {line!r}")
            return 1

        client = HealClient(socket_path)
        client.hello()
        verdict, offsets = client.scan(pid, base, golden_path)
        print(f"{verdict} {len(offsets)} " + ",".join(map(str, offsets)))
        healed = client.heal(pid, base, golden_path)
        print(f"HEALED {healed}")
        client.close()

        harness.stdin.write(b"\n")
        harness.stdin.flush()
        events = fut.result(timeout=30)
        for out_line in harness.stdout.read().decode().splitlines():
            print(out_line)

        hits = [e for e in events if e.kind == "WatchpointHit"]
        int3s = [e for e in events if e.kind == "Int3Hit"]
        if watching:
            _status(f"demo: watchpoint hits recorded: {len(hits)} (expected 0)")
        _status(f"demo: int3 hits recorded: {len(int3s)} (expected 0)")
        _status(f"demo: target exited {harness.exit_code}")
        return 0 if harness.exit_code == 0 and not hits and not int3s else 1
    finally:
        harness.close()
        daemon.terminate()
        daemon.wait()


def _find_gpu_runner() -> str | None:
    import os
    runner = os.environ.get("SELFHEAL_GPU_RUNNER")
    if runner:
        return runner
    default = Path(__file__).resolve().parents[2] / "gpu" / "dist" / "demo.js"
    return str(default) if default.exists() else None


def _demo_device(args) -> int:
    """Transcript scenario with the scan/heal step routed through the
    device-kernel runner instead of the oob daemon."""
    import shutil
    runner = _find_gpu_runner()
    node = shutil.which("node")
    if runner is None or node is None:
        _status("demo: device path unavailable (GPU runner not built or node missing); "
                "nothing run")
        return 0
    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="selfheal-demo-"))
    workdir.mkdir(parents=True, exist_ok=True)
    exe = demo_mod.build_demo_target(workdir)
    image = golden_mod.extract_from_binary(exe, demo_mod.SECRET_SYMBOL)
    golden_path = workdir / "secret_target.golden"
    golden_mod.save(image, golden_path)

    harness = Harness()
    try:
        pid = harness.spawn([str(exe), "--gate", "--unprotect"],
                            capture_output=True, pipe_stdin=True)
        base = runtime_symbol_address(pid, exe, demo_mod.SECRET_SYMBOL)
        harness.plant_int3([base])
        _status(f"demo: adversary planted 0xCC at {demo_mod.SECRET_SYMBOL}+0 (0x{base:x})")

        fut = harness.run_async()
        if harness.stdout.readline().strip() != b"READY":
            _status("demo: target did not report READY")
            return 1

        proc = subprocess.run(
            [node, runner, "--golden", str(golden_path), "--pid", str(pid),
             "--base", f"{base:x}", "--engine", "auto"],
            capture_output=True, text=True, timeout=120)
        sys.stdout.write(proc.stdout)
        sys.stderr.write(proc.stderr)
        if proc.returncode != 0:
            harness.kill()
            return 1

        harness.stdin.write(b"\n")
        harness.stdin.flush()
        events = fut.result(timeout=30)
        for out_line in harness.stdout.read().decode().splitlines():
            print(out_line)
        int3s = [e for e in events if e.kind == "Int3Hit"]
        _status(f"demo: int3 hits recorded: {len(int3s)}")
        _status(f"demo: target exited {harness.exit_code}")
        healed = "device-heal" in proc.stdout
        return 0 if harness.exit_code == 0 and (healed or not int3s) else 1
    finally:
        harness.close()


def cmd_demo(args) -> int:
    try:
        if args.channel == "device":
            return _demo_device(args)
        return _demo_transcript(args)
    except (SelfHealError, OSError) as exc:
        _status(f"demo: {type(exc).__name__}: {exc}")
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfheal",
        description="Breakpoint/patch detection and code healing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bake", help="extract a golden image from a binary's symbol")
    p.add_argument("--binary", required=True)
    p.add_argument("--symbol", required=True)
    p.add_argument("--length", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bake)

    p = sub.add_parser("attack", help="run a target under the adversary harness")
    p.add_argument("--target", required=True, help="target command line (one string)")
    p.add_argument("--golden", required=True)
    p.add_argument("--int3", default=None, help="comma-separated offsets for 0xCC")
    p.add_argument("--watch", type=int, action="append",
                   help="offset for a 1-byte write watchpoint (repeatable)")
    p.add_argument("--patch", action="append", help="OFF=HEXBYTES patch (repeatable)")
    p.add_argument("--events", required=True, help="event log output file")
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("guard", help="wrap a program and heal its protected function")
    p.add_argument("--golden", required=True)
    p.add_argument("--policy", choices=[a.value for a in GuardAction], default="heal")
    p.add_argument("--period-ms", type=int, default=50)
    p.add_argument("--terminate-status", type=int, default=3)
    p.add_argument("--force-mem", action="store_true",
                   help="write through the memory file, ignoring page protections")
    p.add_argument("cmdline", nargs=argparse.REMAINDER,
                   help="-- followed by the target command line")
    p.set_defaults(fn=cmd_guard)

    p = sub.add_parser("heal-daemon", help="serve scan/heal requests on a socket")
    p.add_argument("--socket", required=True)
    p.add_argument("--force-mem", action="store_true")
    p.set_defaults(fn=cmd_heal_daemon)

    p = sub.add_parser("demo", help="scripted end-to-end scenarios")
    p.add_argument("--scenario", choices=["transcript"], required=True)
    p.add_argument("--channel", choices=["oob", "device"], default="oob")
    p.add_argument("--workdir", default=None)
    p.set_defaults(fn=cmd_demo)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
