"""Select the compiled feature core when it is importable.

Set ``GPHLVM_FORCE_PYTHON=1`` to force the NumPy implementation.
"""

import os

from . import _mc_fallback

BACKEND = "python"
_impl = _mc_fallback

if os.environ.get("GPHLVM_FORCE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _mc_ext as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _mc_fallback

features = _impl.features
features_vjp = _impl.features_vjp
