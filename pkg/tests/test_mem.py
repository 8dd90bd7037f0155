import pytest

from selfheal import mem
from selfheal.errors import PermissionChangeFailed
from selfheal.mem import ExecutableArena, RegionSpec, page_span

# mov eax, 42; ret
MOV_EAX_42_RET = bytes([0xB8, 0x2A, 0x00, 0x00, 0x00, 0xC3])


def test_page_span_single_page():
    ps = mem.page_size()
    start, span = page_span(ps * 10 + 5, 8)
    assert start == ps * 10
    assert span == ps


def test_page_span_straddles_boundary():
    ps = mem.page_size()
    start, span = page_span(ps * 10 + ps - 4, 16)
    assert start == ps * 10
    assert span == 2 * ps


def test_region_spec_validation():
    with pytest.raises(ValueError):
        RegionSpec(0, 0)
    with pytest.raises(ValueError):
        RegionSpec((1 << 64) - 4, 16)
    RegionSpec(0x1000, 1)


def test_arena_place_read_write():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET, lock=False)
        assert region.read() == MOV_EAX_42_RET
        region.write(1, b"\x07")
        assert region.read()[1] == 0x07


def test_arena_executes_placed_code():
    with ExecutableArena() as arena:
        arena.place(MOV_EAX_42_RET)
        fn = arena.function()
        assert fn() == 42


def test_arena_lock_is_visible_in_maps():
    with ExecutableArena() as arena:
        arena.place(MOV_EAX_42_RET, lock=True)
        entries = mem.maps_in_range(arena.base, arena.size)
        assert entries and all(e.perms.startswith("r-x") for e in entries)


def test_local_region_write_bounds():
    with ExecutableArena() as arena:
        region = arena.place(MOV_EAX_42_RET, lock=False)
        with pytest.raises(ValueError):
            region.write(len(MOV_EAX_42_RET) - 1, b"\x00\x00")


def test_mprotect_unmapped_range_fails():
    # pick an address far outside any mapping
    hole = 0x10000
    maps = mem.read_maps()
    while any(m.start <= hole < m.end for m in maps):
        hole += 0x10000
    with pytest.raises(PermissionChangeFailed):
        mem.mprotect(hole, mem.page_size(), mem.PROT_READ)


def test_maps_in_range_filters():
    with ExecutableArena() as arena:
        hits = mem.maps_in_range(arena.base, arena.size)
        assert len(hits) >= 1
        assert all(m.end > arena.base and m.start < arena.base + arena.size for m in hits)
