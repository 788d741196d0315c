"""Hot kernels with a compiled backend and a pure-numpy fallback.

The Cython extension is preferred when built; set RADARFUSION_FORCE_PY=1
to force the numpy fallback.  Both backends produce identical results.
"""

import os

from . import _kernels_py

if os.environ.get("RADARFUSION_FORCE_PY") == "1":
    _impl = _kernels_py
else:
    try:
        from . import _kernels_c as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND = _impl.BACKEND
iou_matrix = _impl.iou_matrix
roi_pool_max = _impl.roi_pool_max
