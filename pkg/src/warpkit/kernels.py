"""Hot-kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``WARPKIT_PURE_PYTHON=1`` to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _fallback

BORDER = _fallback.BORDER
ZEROS = _fallback.ZEROS

_NAMES = ("im2col", "col2im", "grid_sample_fwd", "grid_sample_bwd", "trace_contour")


def _load(pure: bool):
    if not pure:
        try:
            from . import _kernels as mod  # type: ignore[attr-defined]

            return "compiled", mod
        except ImportError:
            pass
    return "python", _fallback


def use(backend: str) -> None:
    """Switch backend at runtime ("compiled" or "python"); used by the benchmark and tests."""
    global BACKEND
    name, mod = _load(backend == "python")
    if backend == "compiled" and name != "compiled":
        raise ImportError("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    BACKEND = name
    g = globals()
    for fn in _NAMES:
        g[fn] = getattr(mod, fn)


def compiled_available() -> bool:
    return _load(False)[0] == "compiled"


BACKEND = "python"
use("python" if os.environ.get("WARPKIT_PURE_PYTHON") == "1" else ("compiled" if compiled_available() else "python"))
