"""Bundled demo target: build helper and address bookkeeping."""

from __future__ import annotations

import os
import shutil
import subprocess
import tempfile
from pathlib import Path

from ..errors import SelfHealError

SECRET_SYMBOL = "secret_target"
SECRET_LINE = "secret: license check ok"
SECRET_LINES = 10

SOURCE = Path(__file__).with_name("secret_target.c")

# -O0/-fno-inline for stable bytes, no CET so the function starts with
# push %rbp, non-PIE so the symbol-table address is the runtime address
CFLAGS = ["-O0", "-fno-inline", "-fno-stack-protector",
          "-fcf-protection=none", "-no-pie"]


def find_compiler() -> str | None:
    for cc in (os.environ.get("CC"), "cc", "gcc", "clang"):
        if cc and shutil.which(cc):
            return cc
    return None


def build_demo_target(out_dir: str | os.PathLike | None = None) -> Path:
    """Compile the bundled target; returns the executable path."""
    cc = find_compiler()
    if cc is None:
        raise SelfHealError("no C compiler found to build the demo target")
    out_dir = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="selfheal-demo-"))
    out_dir.mkdir(parents=True, exist_ok=True)
    exe = out_dir / "secret_target"
    result = subprocess.run([cc, *CFLAGS, "-o", str(exe), str(SOURCE)],
                            capture_output=True, text=True)
    if result.returncode != 0:
        raise SelfHealError(f"demo target build failed:\n{result.stderr}")
    return exe
