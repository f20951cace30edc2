"""Chain-kernel backend chosen at import time.

The compiled kernel is used when it was built; ``DNSP_BACKEND=python`` forces
the pure-Python one.
"""
import os

from ._chain_py import PyChainKernel

BACKEND = "python"
ChainKernel = PyChainKernel

if os.environ.get("DNSP_BACKEND", "").lower() != "python":
    try:
        from ._chain_ext import ChainKernel  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass


def kernel_class(name: str | None = None):
    """Kernel class by name ('python' or 'cython'); None gives the default."""
    if name is None:
        return ChainKernel
    if name == "python":
        return PyChainKernel
    if name == "cython":
        from ._chain_ext import ChainKernel as Ext
        return Ext
    raise ValueError(f"unknown backend {name!r}")
