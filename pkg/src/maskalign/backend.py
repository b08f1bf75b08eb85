"""Kernel backend selection: compiled extension core vs pure-numpy fallback.

The hot elementwise/reduction kernels live in ``_ckernels`` (Cython). When
the extension is unavailable the pure-numpy twin ``_kernels_py`` is used
instead; both expose the same functions. Selection happens at import time,
overridable via the ``MASKALIGN_BACKEND`` environment variable (``auto``,
``c``, ``python``) or at runtime with :func:`set_backend` (used by the
parity tests and the backend benchmark).

Matrix products are *not* part of the kernel contract on purpose: numpy's
BLAS handles those in both modes.
"""

import os

from . import _kernels_py
from .errors import ConfigError

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

#: module providing the active kernel set; access as ``backend.kernels.<fn>``
kernels = _kernels_py


class BackendError(ConfigError):
    pass


def available_backends():
    names = ["python"]
    if _ckernels is not None:
        names.insert(0, "c")
    return names


def set_backend(name):
    """Switch the active kernel set. Returns the previous backend name."""
    global kernels
    prev = backend_name()
    if name in ("auto", None):
        name = "c" if _ckernels is not None else "python"
    if name == "c":
        if _ckernels is None:
            raise BackendError("compiled kernels are not available; "
                               "reinstall with a C compiler or use MASKALIGN_BACKEND=python")
        kernels = _ckernels
    elif name == "python":
        kernels = _kernels_py
    else:
        raise BackendError(f"unknown backend {name!r}; expected auto, c, or python")
    return prev


def backend_name():
    return "c" if kernels is _ckernels and _ckernels is not None else "python"


set_backend(os.environ.get("MASKALIGN_BACKEND", "auto"))
