"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy implementation in ``_kernels_py`` takes over. Setting
``HESIT_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

kernels = _kernels_py
name = "python"


def available():
    return ["cython", "python"] if _compiled is not None else ["python"]


def use(backend):
    """Switch the active kernel backend ("cython" or "python")."""
    global kernels, name
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        kernels = _compiled
    elif backend == "python":
        kernels = _kernels_py
    else:
        raise ValueError(f"unknown backend {backend!r}")
    name = backend


if _compiled is not None and not os.environ.get("HESIT_PURE_PYTHON"):
    use("cython")
