"""Numba acceleration switch.

The per-sample recursions in :mod:`battwin.kernels` are written so they run
either as numba ``@njit`` machine code (default) or as plain Python/numpy.
The pure-numpy fallback is selected with::

    BATTWIN_NUMBA=0

Anything in {"0", "false", "no", "off"} (case-insensitive) disables the JIT.
If numba is not importable the fallback is used silently.
"""

import os

_FALSY = {"0", "false", "no", "off"}


def _env_wants_numba() -> bool:
    return os.environ.get("BATTWIN_NUMBA", "1").strip().lower() not in _FALSY


NUMBA_ENABLED = False
if _env_wants_numba():
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False


def maybe_njit(*args, **kwargs):
    """``numba.njit`` when acceleration is on, identity decorator otherwise."""
    if NUMBA_ENABLED:
        from numba import njit

        kwargs.setdefault("cache", True)
        return njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]

    def passthrough(func):
        return func

    return passthrough
