"""Numba dispatch.

Kernels are compiled with numba when it is importable and the environment
variable ``CLINAUDIT_DISABLE_NUMBA`` is unset (or ``0``).  Otherwise every
kernel runs through its pure-numpy twin in :mod:`clinaudit.kernels`.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("CLINAUDIT_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by CLINAUDIT_DISABLE_NUMBA")
    from numba import njit  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrapper(func):
            return func

        return wrapper


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
