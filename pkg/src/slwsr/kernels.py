"""Kernel backend selection.

The compiled Cython module is preferred; the numpy implementation in
``_fallback`` is used when the extension is unavailable or when the
environment variable ``SLWSR_BACKEND=python`` is set at import time.
"""
import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)


def _load():
    if os.environ.get("SLWSR_BACKEND", "").lower() == "python":
        return _fallback
    try:
        from . import _kernels
    except ImportError:
        logger.debug("compiled kernels unavailable, using numpy fallback")
        return _fallback
    return _kernels


backend = _load()
BACKEND = backend.NAME

im2col = backend.im2col
col2im = backend.col2im
depthwise_forward = backend.depthwise_forward
depthwise_backward = backend.depthwise_backward


def available_backends():
    """Return every importable kernel module keyed by name."""
    found = {"python": _fallback}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["cython"] = _kernels
    return found
