#!/usr/bin/env python3
"""Baking a golden image from a real binary and round-tripping the file.

Run: python3 demos/02_golden_images.py
"""

import tempfile
from pathlib import Path

from selfheal import extract_from_binary, load, save
from selfheal.demo import SECRET_SYMBOL, build_demo_target

workdir = Path(tempfile.mkdtemp(prefix="selfheal-demo02-"))
exe = build_demo_target(workdir)
print("built demo target:", exe)

image = extract_from_binary(exe, SECRET_SYMBOL)
print(f"extracted {image.symbol}: {image.length} bytes, "
      f"checksum {image.checksum:08x}")
print("first bytes:", image.data[:8].hex(" "))

golden_path = workdir / "secret_target.golden"
save(image, golden_path)
print("\nGOLDENv1 file:")
print(golden_path.read_text())

again = load(golden_path)
assert again == image
print("parse(serialize(image)) round-trips field-for-field:", again == image)
