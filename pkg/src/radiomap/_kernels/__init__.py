"""Ray-march kernel selection: compiled extension when built, else pure Python.

Set RADIOMAP_PURE_PYTHON=1 to force the fallback (used by the benchmark and by
tests that compare both paths).
"""

import os

from ._trace_py import trace_obstruction_counts as trace_obstruction_counts_py

try:
    from ._trace import trace_obstruction_counts as trace_obstruction_counts_compiled
except ImportError:
    trace_obstruction_counts_compiled = None

HAVE_COMPILED = trace_obstruction_counts_compiled is not None

if HAVE_COMPILED and os.environ.get("RADIOMAP_PURE_PYTHON", "0") != "1":
    trace_obstruction_counts = trace_obstruction_counts_compiled
else:
    trace_obstruction_counts = trace_obstruction_counts_py
