"""Kernel backend selection.

The compiled extension (``_core_cy``) is preferred when it imports; the
pure numpy twin (``_core_py``) is the fallback.  Set the environment
variable ``FRACNETID_BACKEND`` to ``python`` or ``cython`` to force a
choice (forcing ``cython`` raises if the extension is missing).
"""

from __future__ import annotations

import os

from . import _core_py

_forced = os.environ.get("FRACNETID_BACKEND", "").strip().lower()

if _forced == "python":
    _impl = _core_py
    BACKEND = "python"
elif _forced == "cython":
    from . import _core_cy as _impl  # noqa: F401

    BACKEND = "cython"
elif _forced:
    raise ValueError(
        f"FRACNETID_BACKEND must be 'python' or 'cython', got {_forced!r}"
    )
else:
    try:
        from . import _core_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _core_py
        BACKEND = "python"

gl_table = _impl.gl_table
frac_diff = _impl.frac_diff
kalman_sweep = _impl.kalman_sweep
