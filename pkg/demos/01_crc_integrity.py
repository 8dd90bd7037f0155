#!/usr/bin/env python3
"""Checksumming machine code and spotting single-byte tampering.

Run: python3 demos/01_crc_integrity.py
"""

from selfheal import crc32, bake, diff_scan, is_function_patched, scan_int3

# a tiny x86-64 function: mov eax, 42; ret
code = bytes([0xB8, 0x2A, 0x00, 0x00, 0x00, 0xC3])

print("function bytes:", code.hex())
print("crc32:", f"{crc32(code):08x}")
print("crc32 of the standard check string:", f"{crc32(b'123456789'):08x}")

golden = bake(code, "mov42")
print("\ngolden image:", golden.symbol, golden.length, "bytes,",
      f"checksum {golden.checksum:08x}")

# a debugger plants a software breakpoint: first byte becomes 0xCC
hooked = bytes([0xCC]) + code[1:]
print("\nafter planting 0xCC at offset 0:")
print("  scan_int3 over every offset:", scan_int3(hooked, golden.offsets))
print("  checksum differs:", is_function_patched(hooked, golden.checksum))
report = diff_scan(hooked, golden)
print("  diff_scan -> int3 at", list(report.int3_offsets),
      "patches at", list(report.patch_offsets))

# an analyst patches an opcode instead (not 0xCC): the 0xCC sweep is blind,
# the checksum is not
patched = code[:1] + bytes([0x2B]) + code[2:]
print("\nafter patching offset 1 to 0x2b:")
print("  scan_int3:", scan_int3(patched, golden.offsets))
print("  is_function_patched:", is_function_patched(patched, golden.checksum))
print("  diff_scan ->", diff_scan(patched, golden))
