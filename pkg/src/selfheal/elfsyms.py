"""Minimal ELF64 symbol-table reader.

Just enough to pull a named function's bytes out of an executable and to
resolve its runtime address in a live process: header, section headers,
.symtab/.strtab, program headers for the PIE load bias. x86-64 only.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

from .errors import NotAnElf, StrippedBinary, SymbolNotFound, ZeroSizeSymbol

ELF_MAGIC = b"\x7fELF"
ET_EXEC = 2
ET_DYN = 3
SHT_SYMTAB = 2
SHT_STRTAB = 3
PT_LOAD = 1
STT_FUNC = 2


@dataclass(frozen=True)
class Symbol:
    name: str
    value: int      # virtual address in the ELF's own address space
    size: int
    info: int
    shndx: int

    @property
    def is_func(self) -> bool:
        return self.info & 0xF == STT_FUNC


@dataclass(frozen=True)
class _Section:
    name: str
    sh_type: int
    addr: int
    offset: int
    size: int
    link: int
    entsize: int


class ElfImage:
    """Parsed view of an ELF64 file (headers and symbol table only)."""

    def __init__(self, path: str | os.PathLike):
        self.path = os.fspath(path)
        with open(self.path, "rb") as f:
            self._raw = f.read()
        raw = self._raw
        if len(raw) < 64 or raw[:4] != ELF_MAGIC:
            raise NotAnElf(f"{self.path}: not an ELF file")
        if raw[4] != 2 or raw[5] != 1:
            raise NotAnElf(f"{self.path}: not a little-endian ELF64")
        (self.e_type, _machine, _version, _entry, self._phoff, self._shoff,
         _flags, _ehsize, self._phentsize, self._phnum,
         self._shentsize, self._shnum, self._shstrndx) = struct.unpack_from(
            "<HHIQQQIHHHHHH", raw, 16)
        self._sections = self._read_sections()

    def _read_sections(self) -> list[_Section]:
        raw = self._raw
        headers = []
        for i in range(self._shnum):
            off = self._shoff + i * self._shentsize
            (sh_name, sh_type, _flags, sh_addr, sh_offset, sh_size,
             sh_link, _info, _align, sh_entsize) = struct.unpack_from(
                "<IIQQQQIIQQ", raw, off)
            headers.append((sh_name, sh_type, sh_addr, sh_offset, sh_size,
                            sh_link, sh_entsize))
        names = b""
        if 0 <= self._shstrndx < len(headers):
            _, _, _, noff, nsize, _, _ = headers[self._shstrndx]
            names = raw[noff:noff + nsize]
        sections = []
        for sh_name, sh_type, sh_addr, sh_offset, sh_size, sh_link, sh_entsize in headers:
            end = names.find(b"\x00", sh_name)
            name = names[sh_name:end].decode("ascii", "replace") if end >= 0 else ""
            sections.append(_Section(name, sh_type, sh_addr, sh_offset, sh_size,
                                     sh_link, sh_entsize))
        return sections

    def symbols(self) -> list[Symbol]:
        """All .symtab entries. Raises StrippedBinary when there is no symtab."""
        symtab = next((s for s in self._sections if s.sh_type == SHT_SYMTAB), None)
        if symtab is None or symtab.entsize == 0:
            raise StrippedBinary(f"{self.path}: no symbol table")
        strtab = self._sections[symtab.link]
        names = self._raw[strtab.offset:strtab.offset + strtab.size]
        out = []
        for off in range(symtab.offset, symtab.offset + symtab.size, symtab.entsize):
            st_name, st_info, _other, st_shndx, st_value, st_size = struct.unpack_from(
                "<IBBHQQ", self._raw, off)
            end = names.find(b"\x00", st_name)
            name = names[st_name:end].decode("ascii", "replace") if end >= 0 else ""
            out.append(Symbol(name, st_value, st_size, st_info, st_shndx))
        return out

    def find_symbol(self, name: str) -> Symbol:
        for sym in self.symbols():
            if sym.name == name:
                return sym
        raise SymbolNotFound(f"{self.path}: symbol {name!r} not found")

    def bytes_at_vaddr(self, vaddr: int, size: int) -> bytes:
        """File bytes backing `size` bytes at virtual address `vaddr`."""
        for s in self._sections:
            if s.sh_type != 0 and s.addr and s.addr <= vaddr and vaddr + size <= s.addr + s.size:
                start = vaddr - s.addr + s.offset
                return self._raw[start:start + size]
        raise SymbolNotFound(f"{self.path}: no section backs {vaddr:#x}+{size}")

    def symbol_bytes(self, name: str) -> tuple[Symbol, bytes]:
        sym = self.find_symbol(name)
        if sym.size == 0:
            raise ZeroSizeSymbol(f"{self.path}: symbol {name!r} has size 0")
        return sym, self.bytes_at_vaddr(sym.value, sym.size)

    def min_load_vaddr(self) -> int:
        raw = self._raw
        lo = None
        for i in range(self._phnum):
            off = self._phoff + i * self._phentsize
            p_type, _flags, _offset, p_vaddr = struct.unpack_from("<IIQQ", raw, off)
            if p_type == PT_LOAD and (lo is None or p_vaddr < lo):
                lo = p_vaddr
        return lo or 0


def runtime_symbol_address(pid: int, binary_path: str | os.PathLike, symbol: str) -> int:
    """Resolve `symbol`'s virtual address inside the running process `pid`.

    For fixed-position executables this is the symbol-table value itself;
    for PIE, the load bias is recovered from /proc/pid/maps.
    """
    image = ElfImage(binary_path)
    sym = image.find_symbol(symbol)
    if image.e_type == ET_EXEC:
        return sym.value
    target = os.path.realpath(binary_path)
    base = None
    with open(f"/proc/{pid}/maps") as f:
        for line in f:
            parts = line.split()
            if len(parts) >= 6 and os.path.realpath(parts[5]) == target:
                start = int(parts[0].split("-")[0], 16)
                base = start if base is None else min(base, start)
    if base is None:
        raise SymbolNotFound(f"pid {pid}: {target} not mapped")
    return base - image.min_load_vaddr() + sym.value
