"""Convolution kernel backend selection.

The compiled extension is preferred when it imports cleanly; otherwise the
numpy reference implementation is used.  Set ``MODA_KERNELS=python`` to force
the fallback or ``MODA_KERNELS=compiled`` to require the extension.
"""
import os

from moda.errors import ConfigError
from moda.kernels import reference

_choice = os.environ.get("MODA_KERNELS", "auto")
if _choice not in ("auto", "python", "compiled"):
    raise ConfigError(f"MODA_KERNELS must be auto, python or compiled, got {_choice!r}")

BACKEND = "python"
conv2d_forward = reference.conv2d_forward
conv2d_backward = reference.conv2d_backward

if _choice in ("auto", "compiled"):
    try:
        from moda.kernels import _conv
    except ImportError:
        if _choice == "compiled":
            raise
    else:
        BACKEND = "compiled"
        conv2d_forward = _conv.conv2d_forward
        conv2d_backward = _conv.conv2d_backward
