"""Hot inner kernels, compiled when the extension is available.

Set ``MOVID_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("MOVID_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

mgs_orthonormalize = _impl.mgs_orthonormalize
deflate = _impl.deflate
gru_step = _impl.gru_step

__all__ = ["BACKEND", "mgs_orthonormalize", "deflate", "gru_step"]
