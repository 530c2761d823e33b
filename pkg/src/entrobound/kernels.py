"""Kernel selection: compiled extension when available, numpy fallback otherwise.

Set ENTROBOUND_NO_EXT=1 to force the fallback (used by the benchmark and by
tests that compare the two implementations).
"""

from __future__ import annotations

import os

from . import _core_py

if os.environ.get("ENTROBOUND_NO_EXT"):
    _impl = _core_py
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _core_py

IMPL = _impl.IMPL
ranges_contained = _impl.ranges_contained
enumerate_ranges = _impl.enumerate_ranges


def implementations():
    """Both kernel implementations, for benchmarks and equivalence tests."""
    impls = {"python": _core_py}
    try:
        from . import _core

        impls["cython"] = _core
    except ImportError:
        pass
    return impls
