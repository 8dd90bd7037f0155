"""Exception types raised across the toolkit."""


class SelfHealError(Exception):
    """Base class for all toolkit errors."""


# --- golden image ---

class EmptyCode(SelfHealError):
    pass


class OffsetOutOfRange(SelfHealError):
    def __init__(self, offset: int, length: int | None = None):
        self.offset = offset
        self.length = length
        detail = f"offset {offset}" + (f" >= length {length}" if length is not None else "")
        super().__init__(detail)


class MalformedHeader(SelfHealError):
    pass


class BadHex(SelfHealError):
    pass


class ChecksumMismatch(SelfHealError):
    def __init__(self, stored: int, computed: int):
        self.stored = stored
        self.computed = computed
        super().__init__(f"stored {stored:#010x} != computed {computed:#010x}")


class NotAnElf(SelfHealError):
    pass


class SymbolNotFound(SelfHealError):
    pass


class StrippedBinary(SelfHealError):
    pass


class ZeroSizeSymbol(SelfHealError):
    pass


# --- scanner / healer ---

class LengthMismatch(SelfHealError):
    pass


class AllocationFailed(SelfHealError):
    pass


class HandlerInstallFailed(SelfHealError):
    pass


class PermissionChangeFailed(SelfHealError):
    pass


# --- tracing / out-of-band memory ---

class TraceError(SelfHealError):
    pass


class PermissionDenied(TraceError):
    pass


class AlreadyTraced(TraceError):
    pass


class NoSuchProcess(TraceError):
    pass


class BadIndex(TraceError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"debug register index {index} is not one of 0-3, 6, 7")


class TraceeNotStopped(TraceError):
    pass


class TraceReadFailed(TraceError):
    pass


class TraceWriteFailed(TraceError):
    pass


class PartialTransfer(TraceError):
    def __init__(self, count: int, requested: int | None = None):
        self.count = count
        self.requested = requested
        super().__init__(f"transferred {count}"
                         + (f" of {requested}" if requested is not None else "") + " bytes")


class DebugRegistersUnsupported(TraceError):
    pass


class TraceeKilled(TraceError):
    def __init__(self, signum: int):
        self.signum = signum
        super().__init__(f"tracee killed by signal {signum}")


# --- adversary harness / oob healer ---

class NoFreeSlot(SelfHealError):
    pass


class VerifyFailed(SelfHealError):
    pass


class BindFailed(SelfHealError):
    pass


class ProtocolError(SelfHealError):
    pass
