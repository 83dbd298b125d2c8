"""Kernel backend selection: compiled extension with pure-Python fallback.

The compiled extension is preferred when importable; set JADE_KERNELS to
"python" or "compiled" to force a choice, or call set_backend() at runtime.
"""

import os
import warnings

from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

_MODULES = {"python": _pykernels}
if _compiled is not None:
    _MODULES["compiled"] = _compiled

_active = _pykernels


def available():
    """Names of the usable kernel backends."""
    return sorted(_MODULES)


def set_backend(name):
    """Select the kernel backend by name ("compiled" or "python")."""
    global _active
    if name not in _MODULES:
        raise ValueError(
            f"unknown or unavailable backend {name!r}; have {available()}"
        )
    _active = _MODULES[name]
    return _active


def get_backend():
    """Name of the active backend."""
    return _active.NAME


def dp_fused_lasso(y, lam):
    return _active.dp_fused_lasso(y, lam)


def fusion_prox_vector(c, w):
    return _active.fusion_prox_vector(c, w)


def fuse_columns(cmat, w):
    return _active.fuse_columns(cmat, w)


def _init():
    requested = os.environ.get("JADE_KERNELS")
    if requested:
        if requested in _MODULES:
            set_backend(requested)
        else:
            warnings.warn(
                f"JADE_KERNELS={requested!r} unavailable, using pure Python",
                RuntimeWarning,
                stacklevel=2,
            )
    elif _compiled is not None:
        set_backend("compiled")


_init()
