"""Pure-numpy reference kernels.

These are the fallback implementations used when the compiled extension
is unavailable (or disabled via RADARFUSION_FORCE_PY=1).  The compiled
kernels must match these bit-for-bit; tests compare both backends.
"""

import math

import numpy as np

BACKEND = "python"


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two (N, 4) / (M, 4) arrays of x1,y1,x2,y2 boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((ix > 0) & (iy > 0), ix * iy, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / union, 0.0)


def roi_pool_max(fm, x1, y1, x2, y2, ph, pw):
    """Max-pool a feature-coordinate box into a (ph, pw, C) grid.

    The box is divided into ph x pw bins with continuous boundaries;
    each bin covers the cells [floor(start), ceil(end)) clipped to the
    map.  Empty bins yield 0.  Returns (out, argmax) where argmax holds
    the flat H*W cell index of each pooled maximum, -1 for empty bins.
    """
    fm = np.asarray(fm, dtype=np.float64)
    h, w, c = fm.shape
    out = np.zeros((ph, pw, c), dtype=np.float64)
    argmax = np.full((ph, pw, c), -1, dtype=np.int64)
    bin_h = (y2 - y1) / ph
    bin_w = (x2 - x1) / pw
    for i in range(ph):
        r0 = max(int(math.floor(y1 + i * bin_h)), 0)
        r1 = min(int(math.ceil(y1 + (i + 1) * bin_h)), h)
        if r1 <= r0:
            continue
        for j in range(pw):
            c0 = max(int(math.floor(x1 + j * bin_w)), 0)
            c1 = min(int(math.ceil(x1 + (j + 1) * bin_w)), w)
            if c1 <= c0:
                continue
            block = fm[r0:r1, c0:c1, :].reshape(-1, c)
            idx = np.argmax(block, axis=0)
            out[i, j, :] = block[idx, np.arange(c)]
            rows = r0 + idx // (c1 - c0)
            cols = c0 + idx % (c1 - c0)
            argmax[i, j, :] = rows * w + cols
    return out, argmax
