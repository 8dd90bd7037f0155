#!/usr/bin/env python3
"""Guard-page probe: who fields an access fault, us or a debugger?

A page is mapped, a lone ret written at its start, all access revoked,
and execution deliberately jumps into it. Untraced, our own recovery
handler observes the fault (HANDLER_RAN). Under a debugger that swallows
the fault, recovery never confirms and the probe reports INCONCLUSIVE
within its timeout instead of hanging.

Run: python3 demos/04_guard_page_probe.py
"""

from selfheal import probe_guard_page

verdict = probe_guard_page(timeout=2.0)
print("probe verdict:", verdict.name)
print("(run this script under the adversary harness with a swallow-SIGSEGV"
      " policy to see INCONCLUSIVE)")
