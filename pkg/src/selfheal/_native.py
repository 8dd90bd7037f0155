"""Shared ctypes bindings for the libc calls the toolkit needs.

Prototypes are declared once here so every caller gets proper 64-bit
argument handling (a bare CDLL call would truncate pointers to int).
"""

from __future__ import annotations

import ctypes

libc = ctypes.CDLL(None, use_errno=True)

libc.ptrace.restype = ctypes.c_long
libc.ptrace.argtypes = [ctypes.c_long, ctypes.c_int, ctypes.c_void_p, ctypes.c_void_p]

libc.mprotect.restype = ctypes.c_int
libc.mprotect.argtypes = [ctypes.c_void_p, ctypes.c_size_t, ctypes.c_int]

libc.sigaction.restype = ctypes.c_int
libc.sigaction.argtypes = [ctypes.c_int, ctypes.c_void_p, ctypes.c_void_p]


class iovec(ctypes.Structure):
    _fields_ = [("iov_base", ctypes.c_void_p), ("iov_len", ctypes.c_size_t)]


libc.process_vm_readv.restype = ctypes.c_ssize_t
libc.process_vm_readv.argtypes = [ctypes.c_int, ctypes.POINTER(iovec), ctypes.c_ulong,
                                  ctypes.POINTER(iovec), ctypes.c_ulong, ctypes.c_ulong]
libc.process_vm_writev.restype = ctypes.c_ssize_t
libc.process_vm_writev.argtypes = [ctypes.c_int, ctypes.POINTER(iovec), ctypes.c_ulong,
                                   ctypes.POINTER(iovec), ctypes.c_ulong, ctypes.c_ulong]


class sigaction_t(ctypes.Structure):
    # glibc layout on x86-64: handler, 1024-bit mask, flags, restorer
    _fields_ = [("sa_handler", ctypes.c_void_p),
                ("sa_mask", ctypes.c_byte * 128),
                ("sa_flags", ctypes.c_int),
                ("sa_restorer", ctypes.c_void_p)]


def errno() -> int:
    return ctypes.get_errno()


def clear_errno() -> None:
    ctypes.set_errno(0)
