"""Golden images: the trusted record of a protected function's bytes.

A golden image pins down everything detection and healing need: the
function's name, exact byte contents, candidate breakpoint offsets, and
the CRC-32 of the clean code. Images round-trip through a line-oriented
text format so they can be diffed and inspected.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

from .crc import crc32
from .elfsyms import ElfImage
from .errors import (BadHex, ChecksumMismatch, EmptyCode, MalformedHeader,
                     OffsetOutOfRange)

_MAGIC = "GOLDENv1"
_SYMBOL_RE = re.compile(r"^[!-~]+$")  # printable, no whitespace
_HEX_RE = re.compile(r"^[0-9a-f]*$")


@dataclass(frozen=True)
class GoldenImage:
    symbol: str
    length: int
    data: bytes
    offsets: tuple[int, ...]
    checksum: int

    def __post_init__(self):
        if self.length < 1 or len(self.data) != self.length:
            raise MalformedHeader(f"length {self.length} != {len(self.data)} data bytes")
        if not _SYMBOL_RE.match(self.symbol):
            raise MalformedHeader(f"bad symbol name {self.symbol!r}")
        prev = -1
        for off in self.offsets:
            if not prev < off < self.length:
                raise OffsetOutOfRange(off, self.length)
            prev = off
        computed = crc32(self.data)
        if self.checksum != computed:
            raise ChecksumMismatch(self.checksum, computed)


def bake(code_bytes: bytes, symbol: str, offsets: list[int] | None = None) -> GoldenImage:
    """Build a golden image from raw function bytes.

    When `offsets` is omitted every byte position is a candidate
    breakpoint site, which lets detection work without a disassembler.
    """
    if not code_bytes:
        raise EmptyCode(f"no code bytes for {symbol!r}")
    if offsets is None:
        offs = tuple(range(len(code_bytes)))
    else:
        offs = tuple(sorted(set(int(o) for o in offsets)))
    return GoldenImage(symbol=symbol, length=len(code_bytes), data=bytes(code_bytes),
                       offsets=offs, checksum=crc32(code_bytes))


def serialize(image: GoldenImage) -> bytes:
    """Render an image in the GOLDENv1 text format (LF line endings)."""
    lines = [
        _MAGIC,
        f"symbol {image.symbol}",
        f"length {image.length}",
        f"checksum {image.checksum:08x}",
        "offsets " + ",".join(str(o) for o in image.offsets),
        "bytes " + image.data.hex(),
    ]
    return ("\n".join(lines) + "\n").encode("ascii")


def _field(line: str, key: str) -> str:
    head, _, rest = line.partition(" ")
    if head != key:
        raise MalformedHeader(f"expected {key!r} line, got {line!r}")
    return rest


def parse(data: bytes) -> GoldenImage:
    """Parse a GOLDENv1 file, validating every image invariant."""
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise MalformedHeader("not ASCII") from exc
    lines = text.split("\n")
    if len(lines) != 7 or lines[6] != "":
        raise MalformedHeader("expected exactly 6 LF-terminated lines")
    if lines[0] != _MAGIC:
        raise MalformedHeader(f"bad magic {lines[0]!r}")
    symbol = _field(lines[1], "symbol")
    length_s = _field(lines[2], "length")
    checksum_s = _field(lines[3], "checksum")
    offsets_s = _field(lines[4], "offsets")
    bytes_s = _field(lines[5], "bytes")

    if not length_s.isdigit():
        raise MalformedHeader(f"bad length {length_s!r}")
    length = int(length_s)
    if len(checksum_s) != 8 or not _HEX_RE.match(checksum_s):
        raise BadHex(f"checksum must be 8 lowercase hex digits, got {checksum_s!r}")
    checksum = int(checksum_s, 16)
    if offsets_s:
        parts = offsets_s.split(",")
        if not all(p.isdigit() for p in parts):
            raise MalformedHeader(f"bad offsets {offsets_s!r}")
        offsets = tuple(int(p) for p in parts)
    else:
        offsets = ()
    if len(bytes_s) != 2 * length or not _HEX_RE.match(bytes_s):
        raise BadHex(f"bytes must be {2 * length} lowercase hex digits")
    payload = bytes.fromhex(bytes_s)
    # GoldenImage.__post_init__ re-checks offsets, checksum, symbol
    return GoldenImage(symbol=symbol, length=length, data=payload,
                       offsets=offsets, checksum=checksum)


def save(image: GoldenImage, path: str | os.PathLike) -> None:
    with open(path, "wb") as f:
        f.write(serialize(image))


def load(path: str | os.PathLike) -> GoldenImage:
    with open(path, "rb") as f:
        return parse(f.read())


def extract_from_binary(executable_path: str | os.PathLike, symbol: str,
                        length: int | None = None) -> GoldenImage:
    """Bake a golden image straight from an executable's symbol table.

    `length` overrides the symbol-table size (it must not exceed it when
    the symbol size is known).
    """
    image = ElfImage(executable_path)
    sym, code = image.symbol_bytes(symbol)
    if length is not None:
        if length < 1 or length > len(code):
            raise OffsetOutOfRange(length, len(code))
        code = code[:length]
    return bake(code, symbol)
