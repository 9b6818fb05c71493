"""Kernel backend selection.

The compiled extension (``_core``) is used when built; otherwise the numpy
implementation (``pykern``) takes over. ADAINFER_KERNELS overrides:

* ``auto`` (default): compiled if available, else numpy
* ``c``: compiled, raising if the extension is missing
* ``python``: numpy, even when the extension exists
"""

from __future__ import annotations

import os

from . import pykern

_choice = os.environ.get("ADAINFER_KERNELS", "auto").lower()
if _choice not in ("auto", "c", "python"):
    raise ValueError(f"ADAINFER_KERNELS must be auto, c, or python, not {_choice!r}")

_impl = None
if _choice in ("auto", "c"):
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        if _choice == "c":
            raise ImportError(
                "ADAINFER_KERNELS=c but the compiled extension is not built; "
                "run `python setup.py build_ext --inplace` or reinstall"
            ) from None
        _impl = None
if _impl is None:
    _impl = pykern

BACKEND = "python" if _impl is pykern else "c"

layer_forward = _impl.layer_forward
probe_logits = _impl.probe_logits
confidence_probe = _impl.confidence_probe
cos_sim = _impl.cos_sim
LN_EPS = _impl.LN_EPS


def available_backends() -> tuple[str, ...]:
    """Backends importable in this environment."""
    names = ["python"]
    try:
        from . import _core  # noqa: F401
        names.insert(0, "c")
    except ImportError:
        pass
    return tuple(names)


def get_backend(name: str):
    """Return the kernel module for ``name`` ("c" or "python")."""
    if name == "python":
        return pykern
    if name == "c":
        from . import _core
        return _core
    raise ValueError(f"unknown kernel backend {name!r}")
