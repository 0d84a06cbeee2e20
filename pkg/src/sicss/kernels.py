"""Hot-kernel dispatch.

The compiled extension is used when it imports; set ``SICSS_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("SICSS_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def available_backends():
    names = {"python": _pykernels}
    try:
        from . import _ckernels

        names["cython"] = _ckernels
    except ImportError:
        pass
    return names


def projection_power(Z, H):
    return _impl.projection_power(Z, H)


def cacg_log_terms(Z, H, epsilon):
    return _impl.cacg_log_terms(Z, H, epsilon)


class use_backend:
    """Context manager selecting a backend by name for the enclosed block."""

    def __init__(self, name):
        backends = available_backends()
        if name not in backends:
            raise ValueError(f"backend {name!r} not available (have {sorted(backends)})")
        self.name = name
        self._module = backends[name]

    def __enter__(self):
        global _impl, BACKEND
        self._saved = (_impl, BACKEND)
        _impl, BACKEND = self._module, self.name
        return self

    def __exit__(self, *exc):
        global _impl, BACKEND
        _impl, BACKEND = self._saved
        return False
