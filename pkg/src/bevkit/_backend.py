"""Kernel selection at import time.

The compiled ``_kernels`` extension is used when it imports; otherwise the
pure-Python ``_pykernels`` module. Set ``BEVKIT_PURE_PYTHON=1`` to force the
fallback.
"""
import os

from bevkit import _pykernels as python_kernels

compiled_kernels = None
if os.environ.get("BEVKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from bevkit import _kernels as compiled_kernels
    except ImportError:
        compiled_kernels = None

kernels = compiled_kernels if compiled_kernels is not None else python_kernels
BACKEND = "compiled" if compiled_kernels is not None else "python"


def get_kernels(name=None):
    """Return the kernel module for ``name`` ('compiled', 'python' or None for the default)."""
    if name is None:
        return kernels
    if name == "python":
        return python_kernels
    if name == "compiled":
        if compiled_kernels is None:
            raise RuntimeError("compiled kernels are not available in this build")
        return compiled_kernels
    raise ValueError(f"unknown kernel backend {name!r}")
