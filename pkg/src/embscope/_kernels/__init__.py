"""Hot numerical kernels.

The compiled extension ``_cd`` is used when it was built; otherwise the
pure-Python implementation in ``_fallback`` is selected. Setting
``EMBSCOPE_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _fallback

fallback = _fallback

if os.environ.get("EMBSCOPE_PURE_PYTHON"):
    compiled = None
else:
    try:
        from . import _cd as compiled
    except ImportError:
        compiled = None

_active = compiled if compiled is not None else _fallback
BACKEND = "cython" if compiled is not None else "python"

cd_gram = _active.cd_gram
soft_threshold = _active.soft_threshold

__all__ = ["BACKEND", "cd_gram", "soft_threshold", "compiled", "fallback"]
