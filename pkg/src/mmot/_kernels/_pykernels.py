"""Pure numpy versions of the compiled kernels.

Both backends must return bit-identical results: sums are accumulated in the
same order and ties in the minimum go to the first row.
"""

import numpy as np

# rows of the (P, M) work array processed at once
_CHUNK_ELEMENTS = 1 << 20


def tuple_min(dxy, idx, inner):
    """Minimise ``sum_j dxy[p, idx[t, j]] + inner[t]`` over the rows ``t``.

    Returns the minimum value for every ``p`` and the minimising row.
    """
    dxy = np.ascontiguousarray(dxy, dtype=np.float64)
    idx = np.ascontiguousarray(idx, dtype=np.intp)
    inner = np.ascontiguousarray(inner, dtype=np.float64)
    n_points = dxy.shape[0]
    n_rows, width = idx.shape
    values = np.empty(n_points)
    arg = np.empty(n_points, dtype=np.intp)
    step = max(1, _CHUNK_ELEMENTS // max(n_rows, 1))
    for start in range(0, n_points, step):
        block = dxy[start:start + step]
        total = block[:, idx[:, 0]]
        for j in range(1, width):
            total = total + block[:, idx[:, j]]
        total = total + inner
        best = np.argmin(total, axis=1)
        arg[start:start + step] = best
        values[start:start + step] = total[np.arange(len(block)), best]
    return values, arg


def window_mass_1d(x, w, width):
    """Largest total weight of sorted points ``x`` inside a half-open window.

    A window starting at ``x[i]`` holds every ``x[j] < x[i] + width``.
    Returns ``(mass, i)`` for the first maximising start.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    prefix = np.zeros(len(x) + 1)
    np.cumsum(w, out=prefix[1:])
    ends = np.searchsorted(x, x + width, side="left")
    mass = prefix[ends] - prefix[:-1]
    best = int(np.argmax(mass))
    return float(mass[best]), best
