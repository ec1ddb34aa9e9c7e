"""Import-time selection of the MLP kernel implementation.

``FAIRFED_BACKEND`` chooses: ``auto`` (default; compiled if importable),
``compiled`` (fail loudly if the extension is missing) or ``python``.
"""
import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)


def load(name=None):
    """Return ``(module, backend_name)`` for the requested backend."""
    name = (name or os.environ.get("FAIRFED_BACKEND", "auto")).lower()
    if name not in ("auto", "compiled", "python"):
        raise ValueError(f"unknown FAIRFED_BACKEND {name!r}")
    if name == "python":
        return _kernels_py, "python"
    try:
        from . import _kernels
    except ImportError:
        if name == "compiled":
            raise
        log.debug("compiled kernels unavailable, using numpy fallback")
        return _kernels_py, "python"
    return _kernels, "compiled"


kernels, BACKEND = load()
