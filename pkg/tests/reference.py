"""Independent reference implementations used as test oracles.

Nothing here may import from selfheal's implementation paths beyond
plain constants; oracles must stay independent of the code they check.
"""


def crc32_bitserial(data: bytes) -> int:
    """Bit-serial reflected CRC-32: no lookup table, one bit at a time.

    Polynomial 0xEDB88320, init 0xFFFFFFFF, final complement.
    """
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ 0xEDB88320
            else:
                crc >>= 1
    return ~crc & 0xFFFFFFFF


def crc32_table_entry_bitserial(n: int) -> int:
    """Single table entry derived bit-serially from byte value n."""
    crc = n
    for _ in range(8):
        if crc & 1:
            crc = (crc >> 1) ^ 0xEDB88320
        else:
            crc >>= 1
    return crc & 0xFFFFFFFF
