"""Kernel backend selection.

Two interchangeable implementations of the convolution/pooling kernels exist:
a compiled Cython extension (ckernels) and a pure numpy fallback (pykernels).
The active one is chosen once at import time:

    QUICKNET_KERNELS=auto   compiled if built, else numpy (default)
    QUICKNET_KERNELS=c      compiled, error if the extension is missing
    QUICKNET_KERNELS=py     numpy, even when the extension is available

Both backends satisfy the same numerical contracts; benchmarks/bench_kernels.py
compares their speed and agreement.
"""

import os

from . import pykernels

_choice = os.environ.get("QUICKNET_KERNELS", "auto").lower()
if _choice not in ("auto", "c", "py"):
    raise ValueError(f"QUICKNET_KERNELS must be auto, c, or py (got {_choice!r})")

_impl = pykernels
if _choice in ("auto", "c"):
    try:
        from . import ckernels as _ck

        _impl = _ck
    except ImportError:
        if _choice == "c":
            raise


def backend_name():
    """Name of the active backend: 'c' or 'python'."""
    return _impl.BACKEND_NAME


def available_backends():
    names = ["python"]
    try:
        from . import ckernels  # noqa: F401

        names.insert(0, "c")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Fetch a backend module by name regardless of the active selection."""
    if name in ("py", "python"):
        return pykernels
    if name == "c":
        from . import ckernels

        return ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
avgpool_forward = _impl.avgpool_forward
avgpool_backward = _impl.avgpool_backward
