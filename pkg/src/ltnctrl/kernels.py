"""Select the rollout kernel at import time.

The compiled extension is used when it was built; set ``LTN_PURE_PYTHON=1``
to force the NumPy fallback.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py.rollout

if os.environ.get("LTN_PURE_PYTHON", "") in ("", "0"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled.rollout
        BACKEND = "cython"


def rollout(alpha, s, W, B, K1, K2, r, x0, noise, integrate=False, backend=None):
    """Closed-loop rollout on the plant ``(alpha, s, W, B)``.

    ``noise`` has one row per step; pass zeros for a noise-free run.
    """
    args = [np.ascontiguousarray(a, dtype=float) for a in (W, B, K1, K2, r, x0, noise)]
    impl = _impl
    if backend == "python":
        impl = _kernels_py.rollout
    elif backend == "cython":
        from . import _kernels as _compiled

        impl = _compiled.rollout
    return impl(float(alpha), float(s), *args, bool(integrate))
