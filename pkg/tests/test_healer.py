import time

import pytest

from selfheal import mem
from selfheal.crc import crc32
from selfheal.errors import PermissionChangeFailed
from selfheal.golden import bake
from selfheal.healer import (GuardAction, GuardPolicy, GuardThread, heal,
                             guard_loop, restore_protection, unprotect)
from selfheal.mem import ExecutableArena, LocalRegion, RegionSpec
from selfheal.scanner import diff_scan

MOV_EAX_42_RET = bytes([0xB8, 0x2A, 0x00, 0x00, 0x00, 0xC3])
MOV_EAX_7_RET = bytes([0xB8, 0x07, 0x00, 0x00, 0x00, 0xC3])


def _maps_snapshot(base, size):
    return [(m.start, m.end, m.perms) for m in mem.maps_in_range(base, size)]


def test_unprotect_single_page():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        guard = unprotect(region.spec)
        assert guard.span == mem.page_size()
        assert guard.page_start == mem.page_start(region.base)
        entries = mem.maps_in_range(guard.page_start, guard.span)
        assert all(e.perms.startswith("rwx") for e in entries)
        restore_protection(guard)


def test_unprotect_straddling_region_covers_both_pages():
    ps = mem.page_size()
    with ExecutableArena(2 * ps) as arena:
        region = arena.place(MOV_EAX_42_RET, offset=ps - 3)
        guard = unprotect(region.spec)
        assert guard.span == 2 * ps
        restore_protection(guard)


def test_unprotect_unmapped_region_fails():
    hole = 0x20000
    maps = mem.read_maps()
    while any(m.start <= hole < m.end + mem.page_size() for m in maps):
        hole += 0x20000
    with pytest.raises(PermissionChangeFailed):
        unprotect(RegionSpec(hole, 4))


def test_restore_protection_round_trip_and_idempotence():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        before = _maps_snapshot(arena.base, arena.size)
        guard = unprotect(region.spec)
        assert _maps_snapshot(arena.base, arena.size) != before
        assert restore_protection(guard) is True
        assert _maps_snapshot(arena.base, arena.size) == before
        assert restore_protection(guard) is True  # second call: no-op
        assert _maps_snapshot(arena.base, arena.size) == before


def test_heal_noop_when_clean():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        golden = bake(MOV_EAX_42_RET, "f")
        report = heal(region, golden)
        assert report.restored_offsets == ()
        assert report.bytes_written == 0


def test_heal_restores_planted_int3():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        golden = bake(MOV_EAX_42_RET, "f")
        guard = unprotect(region.spec)
        region.write(0, b"\xcc")
        restore_protection(guard)
        report = heal(region, golden)
        assert report.restored_offsets == (0,)
        assert report.permissions_restored is True
        assert diff_scan(region.read(), golden).clean
        assert crc32(region.read()) == golden.checksum


def test_heal_scattered_patches_then_clean():
    code = bytes(range(40))
    with ExecutableArena() as arena:
        region = arena.place(code)
        golden = bake(code, "f")
        guard = unprotect(region.spec)
        region.write(3, b"\xcc")
        region.write(17, b"\x00")
        region.write(39, b"\xff")
        restore_protection(guard)
        report = heal(region, golden)
        assert report.restored_offsets == (3, 17, 39)
        assert report.bytes_written == 3
        # brute-force verification of post state
        assert region.read() == code


def test_heal_is_idempotent():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        golden = bake(MOV_EAX_42_RET, "f")
        guard = unprotect(region.spec)
        region.write(0, b"\xcc")
        restore_protection(guard)
        first = heal(region, golden)
        second = heal(region, golden)
        assert first.bytes_written == 1
        assert second.bytes_written == 0


def test_heal_page_permissions_restored_and_code_runs():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        golden = bake(MOV_EAX_42_RET, "f")
        before = _maps_snapshot(arena.base, arena.size)
        guard = unprotect(region.spec)
        region.write(0, MOV_EAX_7_RET[:1])  # same byte actually; patch payload instead
        region.write(1, b"\x07")
        restore_protection(guard)
        assert arena.function()() == 7
        heal(region, golden)
        assert _maps_snapshot(arena.base, arena.size) == before
        assert arena.function()() == 42


def test_heal_keep_rwx_leaves_pages_writable():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        golden = bake(MOV_EAX_42_RET, "f")
        guard = unprotect(region.spec)
        region.write(1, b"\x09")
        restore_protection(guard)
        report = heal(region, golden, keep_rwx=True)
        assert report.permissions_restored is False
        entries = mem.maps_in_range(region.base, region.length)
        assert all(e.perms.startswith("rwx") for e in entries)


def test_heal_touches_nothing_outside_region():
    canary = bytes([0xAA] * 8)
    code = MOV_EAX_42_RET
    with ExecutableArena() as arena:
        arena.place(canary + code + canary, lock=False)
        region = LocalRegion(arena.base + 8, len(code))
        golden = bake(code, "f")
        region.write(2, b"\x55")
        arena.lock()
        heal(region, golden)
        full = LocalRegion(arena.base, 8 + len(code) + 8).read()
        assert full == canary + code + canary


def test_guard_loop_clean_ticks():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        golden = bake(MOV_EAX_42_RET, "f")
        policy = GuardPolicy(period_s=0.001)
        events = list(guard_loop(region, golden, policy, max_ticks=3))
        assert [e.kind for e in events] == ["scan", "scan", "scan"]
        assert all(e.scan.clean for e in events)


def test_guard_loop_detects_and_heals():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        golden = bake(MOV_EAX_42_RET, "f")
        guard = unprotect(region.spec)
        region.write(0, b"\xcc")
        restore_protection(guard)
        policy = GuardPolicy(action=GuardAction.HEAL, period_s=0.001)
        events = list(guard_loop(region, golden, policy, max_ticks=2))
        kinds = [e.kind for e in events]
        assert kinds == ["scan", "heal", "scan"]
        assert events[1].heal.restored_offsets == (0,)
        assert events[2].scan.clean


def test_guard_loop_terminate_policy():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        golden = bake(MOV_EAX_42_RET, "f")
        guard = unprotect(region.spec)
        region.write(0, b"\xcc")
        restore_protection(guard)
        policy = GuardPolicy(action=GuardAction.TERMINATE, period_s=0.001)
        events = list(guard_loop(region, golden, policy, max_ticks=5))
        assert events[-1].kind == "terminate"
        assert len(events) == 2  # scan + terminate, stream ends


def test_guard_loop_report_only_does_not_heal():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        golden = bake(MOV_EAX_42_RET, "f")
        guard = unprotect(region.spec)
        region.write(0, b"\xcc")
        restore_protection(guard)
        policy = GuardPolicy(action=GuardAction.REPORT, period_s=0.001)
        events = list(guard_loop(region, golden, policy, max_ticks=2))
        assert all(e.kind == "scan" for e in events)
        assert not diff_scan(region.read(), golden).clean


def test_guard_thread_heals_live_plant():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET)
        golden = bake(MOV_EAX_42_RET, "f")
        thread = GuardThread(region, golden, GuardPolicy(period_s=0.002)).start()
        time.sleep(0.02)
        guard = unprotect(region.spec)
        region.write(0, b"\xcc")
        restore_protection(guard)
        deadline = time.time() + 5
        while diff_scan(region.read(), golden).clean is False and time.time() < deadline:
            time.sleep(0.005)
        events = thread.stop()
        assert diff_scan(region.read(), golden).clean
        assert any(e.kind == "heal" for e in events)
        assert arena.function()() == 42
