"""Process tracing and cross-process memory access (x86-64 Linux).

Two distinct channels live here on purpose:

* TraceSession wraps the OS tracing interface: it can stop a child,
  read and write its debug registers, and poke its memory *via the
  tracing relationship*.
* oob_read/oob_write transfer memory in the caller's own context with no
  tracing relationship at all, so the target's hardware watchpoints never
  observe the access. This is the out-of-band healing channel.
"""

from __future__ import annotations

import ctypes
import errno as _errno
import functools
import os
import signal
import struct
import subprocess
import threading

from ._native import clear_errno, errno, iovec, libc
from .errors import (AlreadyTraced, BadIndex, DebugRegistersUnsupported,
                     NoSuchProcess, PartialTransfer, PermissionDenied,
                     TraceError, TraceReadFailed, TraceWriteFailed,
                     TraceeNotStopped)

# <sys/ptrace.h> request numbers
PTRACE_TRACEME = 0
PTRACE_PEEKTEXT = 1
PTRACE_PEEKDATA = 2
PTRACE_PEEKUSER = 3
PTRACE_POKETEXT = 4
PTRACE_POKEDATA = 5
PTRACE_POKEUSER = 6
PTRACE_CONT = 7
PTRACE_SINGLESTEP = 9
PTRACE_ATTACH = 16
PTRACE_DETACH = 17
PTRACE_SETOPTIONS = 0x4200
PTRACE_GETEVENTMSG = 0x4201
PTRACE_GETSIGINFO = 0x4202

PTRACE_O_TRACEFORK = 0x0002
PTRACE_O_TRACEVFORK = 0x0004
PTRACE_O_TRACECLONE = 0x0008
PTRACE_O_EXITKILL = 0x00100000

PTRACE_EVENT_FORK = 1
PTRACE_EVENT_VFORK = 2
PTRACE_EVENT_CLONE = 3
PTRACE_EVENT_EXEC = 4

WALL = 0x40000000

# siginfo si_code values for SIGTRAP
SI_KERNEL = 0x80
TRAP_BRKPT = 1
TRAP_TRACE = 2
TRAP_HWBKPT = 4

_WORD = 8
_U64 = 0xFFFFFFFFFFFFFFFF


class user_regs_struct(ctypes.Structure):
    _fields_ = [(name, ctypes.c_ulonglong) for name in (
        "r15", "r14", "r13", "r12", "rbp", "rbx", "r11", "r10",
        "r9", "r8", "rax", "rcx", "rdx", "rsi", "rdi", "orig_rax",
        "rip", "cs", "eflags", "rsp", "ss", "fs_base", "gs_base",
        "ds", "es", "fs", "gs")]


class user_fpregs_struct(ctypes.Structure):
    _fields_ = [("cwd", ctypes.c_ushort), ("swd", ctypes.c_ushort),
                ("ftw", ctypes.c_ushort), ("fop", ctypes.c_ushort),
                ("rip", ctypes.c_ulonglong), ("rdp", ctypes.c_ulonglong),
                ("mxcsr", ctypes.c_uint), ("mxcr_mask", ctypes.c_uint),
                ("st_space", ctypes.c_uint * 32),
                ("xmm_space", ctypes.c_uint * 64),
                ("padding", ctypes.c_uint * 24)]


class user(ctypes.Structure):
    # mirrors <sys/user.h>; the layout engine supplies the slot offsets
    _fields_ = [("regs", user_regs_struct),
                ("u_fpvalid", ctypes.c_int),
                ("i387", user_fpregs_struct),
                ("u_tsize", ctypes.c_ulong),
                ("u_dsize", ctypes.c_ulong),
                ("u_ssize", ctypes.c_ulong),
                ("start_code", ctypes.c_ulong),
                ("start_stack", ctypes.c_ulong),
                ("signal", ctypes.c_long),
                ("reserved", ctypes.c_int),
                ("u_ar0", ctypes.c_void_p),
                ("u_fpstate", ctypes.c_void_p),
                ("magic", ctypes.c_ulong),
                ("u_comm", ctypes.c_char * 32),
                ("u_debugreg", ctypes.c_ulong * 8)]


DEBUGREG_OFFSET = user.u_debugreg.offset
RIP_OFFSET = user.regs.offset + user_regs_struct.rip.offset

VALID_DR_INDEXES = (0, 1, 2, 3, 6, 7)

# DR7 encoding for a 1-byte write watchpoint on slot n: local-enable bit
# plus read/write field 0b01 (break on data writes), length field 0b00.
def dr7_write_watch_bits(slot: int) -> int:
    return (1 << (2 * slot)) | (0b01 << (16 + 4 * slot))


def dr7_slot_enabled(dr7: int, slot: int) -> bool:
    return bool(dr7 & (0b11 << (2 * slot)))


def dr_addresses_match(dr: list[int], base: int, offsets: list[int]) -> bool:
    """Address-slot comparison used by hardware-breakpoint detection."""
    for offset in offsets:
        for i in range(4):
            if (base + offset) & _U64 == dr[i]:
                return True
    return False


def _raise_errno(e: int, what: str) -> None:
    msg = f"{what}: {os.strerror(e)}"
    if e == _errno.ESRCH:
        raise NoSuchProcess(msg)
    if e in (_errno.EPERM, _errno.EACCES):
        raise PermissionDenied(msg)
    raise TraceError(msg)


def ptrace(request: int, pid: int, addr: int, data: int) -> int:
    """Raw trace call with the peek-result errno discipline."""
    clear_errno()
    ret = libc.ptrace(request, pid, addr, data)
    if ret == -1:
        e = errno()
        if e != 0:
            _raise_errno(e, f"ptrace(request={request}, pid={pid})")
    return ret


def tracer_pid(pid: int) -> int | None:
    try:
        with open(f"/proc/{pid}/status") as f:
            for line in f:
                if line.startswith("TracerPid:"):
                    return int(line.split()[1])
    except (OSError, ValueError):
        return None
    return None


class TraceSession:
    """Handle to one traced process; confined to the attaching thread.

    The OS requires every trace request for a tracee to come from the
    thread that attached, so the session records its owner thread and
    refuses calls from anywhere else.
    """

    def __init__(self, pid: int, *, popen: subprocess.Popen | None = None):
        self.pid = pid
        self.attached = True
        self.stopped = True
        self.exit_status: int | None = None
        self.popen = popen
        self._tid = threading.get_ident()

    # --- state guards ---

    def _check_thread(self):
        if threading.get_ident() != self._tid:
            raise TraceError(
                f"session for pid {self.pid} is confined to its attaching thread")

    def _check_stopped(self):
        self._check_thread()
        if not self.attached:
            raise TraceeNotStopped(f"pid {self.pid}: session detached")
        if not self.stopped:
            raise TraceeNotStopped(f"pid {self.pid}: tracee is running")

    # --- run control ---

    def cont(self, sig: int = 0) -> None:
        self._check_stopped()
        ptrace(PTRACE_CONT, self.pid, 0, sig)
        self.stopped = False

    def singlestep(self, sig: int = 0) -> None:
        self._check_stopped()
        ptrace(PTRACE_SINGLESTEP, self.pid, 0, sig)
        self.stopped = False

    def wait(self) -> int:
        """Block until the tracee stops or exits; returns the raw status."""
        self._check_thread()
        _, status = os.waitpid(self.pid, 0)
        if os.WIFSTOPPED(status):
            self.stopped = True
        else:
            self.attached = False
            self.stopped = False
            self.exit_status = status
            if self.popen is not None and self.popen.returncode is None:
                self.popen.returncode = (
                    os.WEXITSTATUS(status) if os.WIFEXITED(status)
                    else -os.WTERMSIG(status))
        return status

    def set_options(self, options: int) -> None:
        self._check_stopped()
        ptrace(PTRACE_SETOPTIONS, self.pid, 0, options)

    def detach(self, sig: int = 0) -> None:
        self._check_stopped()
        ptrace(PTRACE_DETACH, self.pid, 0, sig)
        self.attached = False
        self.stopped = False

    def kill(self) -> None:
        """Force-kill the tracee from any thread and reap it."""
        if self.exit_status is not None:
            return
        try:
            os.kill(self.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        try:
            _, status = os.waitpid(self.pid, 0)
            self.exit_status = status
        except ChildProcessError:
            pass
        self.attached = False
        self.stopped = False
        if self.popen is not None and self.popen.returncode is None:
            self.popen.returncode = -signal.SIGKILL

    # --- memory via the tracing relationship ---

    def peek(self, addr: int) -> int:
        self._check_stopped()
        try:
            return ptrace(PTRACE_PEEKDATA, self.pid, addr, 0) & _U64
        except TraceError as exc:
            raise TraceReadFailed(str(exc)) from exc

    def poke(self, addr: int, word: int) -> None:
        self._check_stopped()
        try:
            ptrace(PTRACE_POKEDATA, self.pid, addr, word & _U64)
        except TraceError as exc:
            raise TraceWriteFailed(str(exc)) from exc

    def read_mem(self, addr: int, length: int) -> bytes:
        out = bytearray()
        base = addr & ~(_WORD - 1)
        while len(out) < (addr - base) + length:
            out += struct.pack("<Q", self.peek(base + len(out)))
        start = addr - base
        return bytes(out[start:start + length])

    def write_mem(self, addr: int, data: bytes) -> None:
        if not data:
            return
        base = addr & ~(_WORD - 1)
        end = addr + len(data)
        end_aligned = (end + _WORD - 1) & ~(_WORD - 1)
        buf = bytearray(self.read_mem(base, end_aligned - base))
        buf[addr - base:addr - base + len(data)] = data
        for i in range(0, len(buf), _WORD):
            self.poke(base + i, struct.unpack_from("<Q", buf, i)[0])

    # --- registers ---

    def read_reg_user(self, offset: int) -> int:
        self._check_stopped()
        try:
            return ptrace(PTRACE_PEEKUSER, self.pid, offset, 0) & _U64
        except TraceError as exc:
            raise TraceReadFailed(str(exc)) from exc

    def write_reg_user(self, offset: int, value: int) -> None:
        self._check_stopped()
        try:
            ptrace(PTRACE_POKEUSER, self.pid, offset, value & _U64)
        except TraceError as exc:
            raise TraceWriteFailed(str(exc)) from exc

    @property
    def rip(self) -> int:
        return self.read_reg_user(RIP_OFFSET)

    @rip.setter
    def rip(self, value: int) -> None:
        self.write_reg_user(RIP_OFFSET, value)

    def siginfo_code(self) -> int:
        """si_code of the signal that caused the current stop."""
        self._check_stopped()
        buf = ctypes.create_string_buffer(128)
        ptrace(PTRACE_GETSIGINFO, self.pid, 0, ctypes.addressof(buf))
        _signo, _errno_, code = struct.unpack_from("iii", buf.raw)
        return code

    def event_msg(self) -> int:
        self._check_stopped()
        msg = ctypes.c_ulong(0)
        ptrace(PTRACE_GETEVENTMSG, self.pid, 0, ctypes.addressof(msg))
        return msg.value

    # --- debug registers ---

    def read_debug_register(self, index: int) -> int:
        if index not in VALID_DR_INDEXES:
            raise BadIndex(index)
        return self.read_reg_user(DEBUGREG_OFFSET + _WORD * index)

    def write_debug_register(self, index: int, value: int) -> None:
        if index not in VALID_DR_INDEXES:
            raise BadIndex(index)
        self.write_reg_user(DEBUGREG_OFFSET + _WORD * index, value)

    def hw_breakpoint_present(self, base: int, offsets: list[int]) -> bool:
        """True iff any of DR0-DR3 equals base+offset for a listed offset.

        The enable bits in DR7 are deliberately not consulted: a parked
        address in a disabled slot still counts.
        """
        dr = [self.read_debug_register(i) for i in range(4)]
        return dr_addresses_match(dr, base, offsets)

    def clear_hw_breakpoints(self) -> None:
        """Zero DR0-DR3 plus the DR6 status and DR7 control words."""
        for i in (0, 1, 2, 3, 6, 7):
            self.write_debug_register(i, 0)


def _traceme():
    libc.ptrace(PTRACE_TRACEME, 0, None, None)


def spawn_traced(argv: list[str], *, capture_output: bool = False,
                 pipe_stdin: bool = False, env: dict | None = None,
                 cwd: str | None = None, kill_on_exit: bool = True) -> TraceSession:
    """Start argv as a traced child, stopped at its exec boundary."""
    popen = subprocess.Popen(
        argv,
        preexec_fn=_traceme,
        stdin=subprocess.PIPE if pipe_stdin else None,
        stdout=subprocess.PIPE if capture_output else None,
        stderr=subprocess.PIPE if capture_output else None,
        env=env, cwd=cwd)
    _, status = os.waitpid(popen.pid, 0)
    if not os.WIFSTOPPED(status):
        raise TraceError(f"{argv[0]} did not stop at exec (status {status:#x})")
    session = TraceSession(popen.pid, popen=popen)
    if kill_on_exit:
        session.set_options(PTRACE_O_EXITKILL)
    return session


def attach(pid: int) -> TraceSession:
    """Attach to an existing process and wait for it to stop."""
    try:
        ptrace(PTRACE_ATTACH, pid, 0, 0)
    except PermissionDenied:
        tp = tracer_pid(pid)
        if tp not in (None, 0, os.getpid()):
            raise AlreadyTraced(f"pid {pid} is already traced by {tp}") from None
        raise
    try:
        os.waitpid(pid, 0)
    except ChildProcessError:
        # not our child: poll the proc state until the stop is visible
        import time
        for _ in range(1000):
            with open(f"/proc/{pid}/stat") as f:
                if f.read().split()[2] in ("t", "T"):
                    break
            time.sleep(0.001)
    return TraceSession(pid)


# --- out-of-band channel (no tracing relationship) ---

def oob_read(pid: int, addr: int, length: int) -> bytes:
    """Read target memory in the caller's context via the vm transfer call."""
    if length == 0:
        return b""
    buf = ctypes.create_string_buffer(length)
    done = 0
    while done < length:
        local = iovec(ctypes.addressof(buf) + done, length - done)
        remote = iovec((addr + done) & _U64, length - done)
        clear_errno()
        n = libc.process_vm_readv(pid, ctypes.byref(local), 1,
                                  ctypes.byref(remote), 1, 0)
        if n <= 0:
            e = errno()
            if e == _errno.EFAULT:
                raise PartialTransfer(done, length)
            _raise_errno(e, f"process_vm_readv(pid={pid}, addr={addr:#x})")
        done += n
    return buf.raw


def oob_write(pid: int, addr: int, data: bytes, *, force: bool = False) -> int:
    """Write target memory in the caller's context; returns bytes written.

    Default path is the vm transfer call, which honors the target's page
    protections (the target is expected to have unprotected its own
    pages). With force=True the write goes through the privileged memory
    file, which ignores page protections entirely.
    """
    if not data:
        return 0
    if force:
        return _mem_file_write(pid, addr, data)
    done = 0
    buf = ctypes.create_string_buffer(bytes(data), len(data))
    while done < len(data):
        local = iovec(ctypes.addressof(buf) + done, len(data) - done)
        remote = iovec((addr + done) & _U64, len(data) - done)
        clear_errno()
        n = libc.process_vm_writev(pid, ctypes.byref(local), 1,
                                   ctypes.byref(remote), 1, 0)
        if n <= 0:
            e = errno()
            if e == _errno.EFAULT:
                raise PartialTransfer(done, len(data))
            _raise_errno(e, f"process_vm_writev(pid={pid}, addr={addr:#x})")
        done += n
    return done


def _mem_file_write(pid: int, addr: int, data: bytes) -> int:
    try:
        fd = os.open(f"/proc/{pid}/mem", os.O_WRONLY)
    except FileNotFoundError:
        raise NoSuchProcess(f"pid {pid} has no memory file") from None
    except PermissionError as exc:
        raise PermissionDenied(str(exc)) from None
    try:
        done = 0
        while done < len(data):
            try:
                n = os.pwrite(fd, data[done:], addr + done)
            except OSError as exc:
                if exc.errno in (_errno.EIO, _errno.EFAULT):
                    raise PartialTransfer(done, len(data)) from None
                if exc.errno == _errno.ESRCH:
                    raise NoSuchProcess(f"pid {pid} exited mid-write") from None
                raise PermissionDenied(str(exc)) from None
            if n == 0:
                raise PartialTransfer(done, len(data))
            done += n
        return done
    finally:
        os.close(fd)


def oob_read_file(pid: int, addr: int, length: int) -> bytes:
    """Memory-file read variant; works even on access-revoked pages."""
    try:
        fd = os.open(f"/proc/{pid}/mem", os.O_RDONLY)
    except FileNotFoundError:
        raise NoSuchProcess(f"pid {pid} has no memory file") from None
    except PermissionError as exc:
        raise PermissionDenied(str(exc)) from None
    try:
        out = os.pread(fd, length, addr)
        if len(out) != length:
            raise PartialTransfer(len(out), length)
        return out
    finally:
        os.close(fd)


# --- capability self-detection ---

def yama_ptrace_scope() -> int | None:
    try:
        with open("/proc/sys/kernel/yama/ptrace_scope") as f:
            return int(f.read().strip())
    except (OSError, ValueError):
        return None


@functools.lru_cache(maxsize=1)
def tracing_capability() -> tuple[bool, str]:
    """Functional probe: can this process trace its own children?"""
    try:
        session = spawn_traced(["/bin/sleep", "30"])
    except (TraceError, OSError) as exc:
        return False, f"cannot spawn a traced child: {exc}"
    try:
        session.peek(session.rip)
    except TraceError as exc:
        return False, f"trace reads fail: {exc}"
    finally:
        session.kill()
    return True, "ok"


@functools.lru_cache(maxsize=1)
def debug_registers_capability() -> tuple[bool, str]:
    """Functional probe: do debug-register writes stick and read back?"""
    ok, why = tracing_capability()
    if not ok:
        return False, why
    session = spawn_traced(["/bin/sleep", "30"])
    try:
        probe_value = 0x10000
        try:
            session.write_debug_register(0, probe_value)
            got = session.read_debug_register(0)
        except TraceError as exc:
            return False, f"debug register access failed: {exc}"
        if got != probe_value:
            return False, (f"debug register writes are dropped "
                           f"(wrote {probe_value:#x}, read back {got:#x}); "
                           f"kernel/sandbox does not virtualize DR0-DR7")
        session.write_debug_register(0, 0)
        return True, "ok"
    finally:
        session.kill()


def require_dr_support() -> None:
    ok, why = debug_registers_capability()
    if not ok:
        raise DebugRegistersUnsupported(why)
