"""Backend selection for the compiled kernels.

The compiled module ``sphpoly._accel`` is used when it imports; setting
``SPHPOLY_BACKEND=python`` forces the pure-Python fallback.
"""

import os

ENV_VAR = "SPHPOLY_BACKEND"


def _load():
    if os.environ.get(ENV_VAR, "").strip().lower() == "python":
        return None
    try:
        from . import _accel
    except ImportError:
        return None
    return _accel


accel = _load()
NAME = "cython" if accel is not None else "python"


def resolve(backend=None):
    """Return the compiled module for ``backend`` in {None, "cython", "python"}.

    ``None`` means the import-time default. Asking for "cython" when the
    extension is missing raises ``ImportError``.
    """
    if backend is None:
        return accel
    if backend == "python":
        return None
    if backend == "cython":
        if accel is None:
            from . import _accel  # noqa: F401  raises the original ImportError
        return accel
    raise ValueError(f"unknown backend {backend!r}")
