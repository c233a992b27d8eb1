"""Hot dynamic-programming kernels with a compiled core and a numpy fallback.

The per-gene count recursions dominate the runtime of the replicability
engines, so they are implemented twice: once in Cython (``_core``) and once
in pure numpy (``_fallback``). The compiled module is preferred when it has
been built; set ``SCREENREP_DISABLE_EXT=1`` to force the numpy path.
``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os

from . import _fallback

if os.environ.get("SCREENREP_DISABLE_EXT", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _fallback

count_tail_dp = _impl.count_tail_dp
convolve_counts = _impl.convolve_counts


def backend() -> str:
    """Name of the active kernel implementation ('cython' or 'numpy')."""
    return _impl.BACKEND


def implementations():
    """All available kernel modules, keyed by backend name."""
    impls = {_fallback.BACKEND: _fallback}
    try:
        from . import _core  # type: ignore[attr-defined]

        impls[_core.BACKEND] = _core
    except ImportError:
        pass
    return impls
