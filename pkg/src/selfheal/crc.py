"""Table-driven CRC-32 over the reflected polynomial 0xEDB88320.

This is the integrity primitive behind patch detection: a protected
function's live bytes are checksummed and compared against the value
recorded in its golden image. Checksums are unsigned 32-bit everywhere;
intermediate state is masked so wider native integers cannot leak in.
"""

from __future__ import annotations

from typing import Iterable

REVERSED_POLYNOMIAL = 0xEDB88320
_MASK = 0xFFFFFFFF


def generate_crc_table() -> tuple[int, ...]:
    """Build the 256-entry byte-fold table for the reflected polynomial.

    Entry n is the result of running byte value n through eight
    shift/conditional-XOR steps. Regeneration always yields the same
    table; callers normally use the module-level cached copy.
    """
    table = []
    for n in range(256):
        checksum = n
        for _ in range(8):
            checksum = (checksum >> 1) ^ (REVERSED_POLYNOMIAL if checksum & 1 else 0)
        table.append(checksum & _MASK)
    return tuple(table)


# Computed once at import; the module import lock makes this race-free.
CRC_TABLE: tuple[int, ...] = generate_crc_table()


def crc32_fold(state: int, byte: int) -> int:
    """Fold one byte into a pre-complement CRC accumulator."""
    return (CRC_TABLE[(state ^ byte) & 0xFF] ^ (state >> 8)) & _MASK


def crc32(data: bytes | bytearray | memoryview | Iterable[int]) -> int:
    """CRC-32 of `data`: init 0xFFFFFFFF, per-byte table fold, final complement.

    crc32(b"") == 0, crc32(b"123456789") == 0xCBF43926.
    """
    checksum = _MASK
    for value in data:
        checksum = CRC_TABLE[(checksum ^ value) & 0xFF] ^ (checksum >> 8)
    return ~checksum & _MASK
