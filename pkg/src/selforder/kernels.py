"""Backend selection for the hot kernels.

The compiled ``_kernels`` extension is used when it imports; otherwise, or
when ``SELFORDER_PURE_PYTHON=1`` is set, the numpy versions in
``_kernels_py`` are used.  ``BACKEND`` names the active choice.
"""

import logging
import os
from types import ModuleType

from . import _kernels_py

log = logging.getLogger(__name__)


def _load_compiled() -> ModuleType | None:
    try:
        from . import _kernels  # type: ignore[attr-defined]
    except ImportError:
        return None
    return _kernels


compiled = _load_compiled()

if compiled is not None and os.environ.get("SELFORDER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    _impl: ModuleType = compiled
    BACKEND = "cython"
else:
    _impl = _kernels_py
    BACKEND = "python"
    if compiled is None:
        log.debug("compiled kernels unavailable; using numpy fallback")


def available_backends() -> dict[str, ModuleType]:
    out = {"python": _kernels_py}
    if compiled is not None:
        out["cython"] = compiled
    return out


sinkhorn_scaling = _impl.sinkhorn_scaling
sinkhorn_scaling_backward = _impl.sinkhorn_scaling_backward
sinkhorn_log = _impl.sinkhorn_log
sinkhorn_log_backward = _impl.sinkhorn_log_backward
fps_order = _impl.fps_order
nn_sqdist = _impl.nn_sqdist
argmax_counts = _impl.argmax_counts
