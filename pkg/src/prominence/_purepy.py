"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Both modules expose the same functions with the same results; this one is
used when the extension is not built.
"""
import numpy as np

CIRCLE_DX = (0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1)
CIRCLE_DY = (-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3)

_INF = float("inf")


def mbd_raster(img, seeds, passes):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    I = img.tolist()
    H = [row[:] for row in I]
    L = [row[:] for row in I]
    seed_rows = np.asarray(seeds, dtype=bool).tolist()
    U = [[0.0 if s else _INF for s in row] for row in seed_rows]

    def relax(y, x, ny, nx):
        u = U[ny][nx]
        if u == _INF:
            return
        v = I[y][x]
        hi = H[ny][nx]
        lo = L[ny][nx]
        if v > hi:
            hi = v
        if v < lo:
            lo = v
        if hi - lo < U[y][x]:
            U[y][x] = hi - lo
            H[y][x] = hi
            L[y][x] = lo

    for _ in range(passes):
        for y in range(h):
            for x in range(w):
                if y > 0:
                    relax(y, x, y - 1, x)
                if x > 0:
                    relax(y, x, y, x - 1)
        for y in range(h - 1, -1, -1):
            for x in range(w - 1, -1, -1):
                if y < h - 1:
                    relax(y, x, y + 1, x)
                if x < w - 1:
                    relax(y, x, y, x + 1)
    return np.array(U, dtype=np.float64).reshape(h, w)


def fast_response(img, threshold, margin):
    img = np.asarray(img, dtype=np.int64)
    h, w = img.shape
    out = np.zeros((h, w), dtype=np.int64)
    margin = max(int(margin), 3)
    if h - 2 * margin <= 0 or w - 2 * margin <= 0:
        return out
    ys = slice(margin, h - margin)
    xs = slice(margin, w - margin)
    p = img[ys, xs]
    ring = np.stack([
        img[margin + dy:h - margin + dy, margin + dx:w - margin + dx]
        for dx, dy in zip(CIRCLE_DX, CIRCLE_DY)
    ])
    absdiff = np.abs(ring - p)
    bright = ring > p + threshold
    dark = ring < p - threshold
    n_bright = bright.sum(axis=0)
    n_dark = dark.sum(axis=0)
    use_bright = n_bright >= 9
    candidate = use_bright | (n_dark >= 9)
    cls = np.where(use_bright, bright, dark)

    run = np.zeros(p.shape, dtype=np.int64)
    run_sum = np.zeros(p.shape, dtype=np.int64)
    best_run = np.zeros(p.shape, dtype=np.int64)
    best_sum = np.zeros(p.shape, dtype=np.int64)
    for j in range(32):
        c = cls[j & 15]
        run = np.where(c, run + 1, 0)
        run_sum = np.where(c, run_sum + absdiff[j & 15], 0)
        better = run > best_run
        best_run = np.where(better, run, best_run)
        best_sum = np.where(better, run_sum, best_sum)
    full = cls.sum(axis=0) == 16
    resp = np.where(full, absdiff.sum(axis=0), best_sum)
    resp = np.where(candidate & ((best_run >= 9) | full), resp, 0)
    out[ys, xs] = resp
    return out
