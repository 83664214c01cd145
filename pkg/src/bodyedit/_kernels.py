"""Hot numeric kernels: z-buffer rasterization, ray-cast occlusion, masked CG solver.

Every kernel has two implementations: a loop version compiled with numba's
``@njit`` and a vectorized pure-numpy fallback. Selection happens once at
import via the ``BODYEDIT_NUMBA`` environment variable:

* ``"1"``  force the numba path (raises if numba is not importable),
* ``"0"``  force the numpy fallback,
* unset    use numba when available.

``benchmarks/bench_kernels.py`` times both paths side by side.
"""

from __future__ import annotations

import os

import numpy as np

_ENV = os.environ.get("BODYEDIT_NUMBA", "").strip()

if _ENV == "0":
    njit = None
elif _ENV == "1":
    from numba import njit
else:
    try:
        from numba import njit
    except ImportError:
        njit = None

NUMBA_ENABLED = njit is not None

# Degenerate-triangle area cutoff and ray-parameter epsilon shared by both paths.
_AREA_EPS = 1e-12
_RAY_EPS = 1e-9


# ---------------------------------------------------------------------------
# z-buffer rasterization
# ---------------------------------------------------------------------------

def _rasterize_np(xy: np.ndarray, zinv: np.ndarray, height: int, width: int):
    tri_map = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    zbuf = np.full((height, width), -np.inf, dtype=np.float64)

    for t in range(xy.shape[0]):
        x0, y0 = xy[t, 0]
        x1, y1 = xy[t, 1]
        x2, y2 = xy[t, 2]
        denom = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(denom) < _AREA_EPS:
            continue
        xmin = max(int(np.ceil(min(x0, x1, x2))), 0)
        xmax = min(int(np.floor(max(x0, x1, x2))), width - 1)
        ymin = max(int(np.ceil(min(y0, y1, y2))), 0)
        ymax = min(int(np.floor(max(y0, y1, y2))), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        ys, xs = np.mgrid[ymin : ymax + 1, xmin : xmax + 1]
        xs = xs.astype(np.float64)
        ys = ys.astype(np.float64)
        l0 = ((x1 - xs) * (y2 - ys) - (x2 - xs) * (y1 - ys)) / denom
        l1 = ((x2 - xs) * (y0 - ys) - (x0 - xs) * (y2 - ys)) / denom
        l2 = 1.0 - l0 - l1
        inside = (l0 >= 0.0) & (l1 >= 0.0) & (l2 >= 0.0)
        z = l0 * zinv[t, 0] + l1 * zinv[t, 1] + l2 * zinv[t, 2]
        win = inside & (z > zbuf[ymin : ymax + 1, xmin : xmax + 1])
        sub = (slice(ymin, ymax + 1), slice(xmin, xmax + 1))
        zbuf[sub][win] = z[win]
        tri_map[sub][win] = t
        bary[sub + (0,)][win] = l0[win]
        bary[sub + (1,)][win] = l1[win]
        bary[sub + (2,)][win] = l2[win]
    return tri_map, bary, zbuf


def _rasterize_loops(xy, zinv, height, width):
    tri_map = np.full((height, width), -1, dtype=np.int32)
    bary = np.zeros((height, width, 3), dtype=np.float64)
    zbuf = np.full((height, width), -np.inf, dtype=np.float64)

    for t in range(xy.shape[0]):
        x0 = xy[t, 0, 0]
        y0 = xy[t, 0, 1]
        x1 = xy[t, 1, 0]
        y1 = xy[t, 1, 1]
        x2 = xy[t, 2, 0]
        y2 = xy[t, 2, 1]
        denom = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(denom) < _AREA_EPS:
            continue
        xmin = max(int(np.ceil(min(x0, min(x1, x2)))), 0)
        xmax = min(int(np.floor(max(x0, max(x1, x2)))), width - 1)
        ymin = max(int(np.ceil(min(y0, min(y1, y2)))), 0)
        ymax = min(int(np.floor(max(y0, max(y1, y2)))), height - 1)
        for yi in range(ymin, ymax + 1):
            ys = float(yi)
            for xi in range(xmin, xmax + 1):
                xs = float(xi)
                l0 = ((x1 - xs) * (y2 - ys) - (x2 - xs) * (y1 - ys)) / denom
                l1 = ((x2 - xs) * (y0 - ys) - (x0 - xs) * (y2 - ys)) / denom
                l2 = 1.0 - l0 - l1
                if l0 < 0.0 or l1 < 0.0 or l2 < 0.0:
                    continue
                z = l0 * zinv[t, 0] + l1 * zinv[t, 1] + l2 * zinv[t, 2]
                if z > zbuf[yi, xi]:
                    zbuf[yi, xi] = z
                    tri_map[yi, xi] = t
                    bary[yi, xi, 0] = l0
                    bary[yi, xi, 1] = l1
                    bary[yi, xi, 2] = l2
    return tri_map, bary, zbuf


_rasterize_jit = njit(cache=True)(_rasterize_loops) if NUMBA_ENABLED else None


def rasterize(xy: np.ndarray, zinv: np.ndarray, height: int, width: int):
    """Rasterize screen-space triangles with a single depth sample per pixel.

    ``xy`` is (n, 3, 2) float64 vertex positions in pixel coordinates
    (pixel centers at integers), ``zinv`` is (n, 3) per-vertex 1/depth.
    Triangles are processed in index order; ties resolve to the earlier
    winner because the depth test is strict. Returns
    ``(tri_map, bary, zbuf)`` where ``tri_map`` holds the front-most
    triangle index per pixel (-1 for background) and ``bary`` the matching
    barycentric coordinates.
    """
    xy = np.ascontiguousarray(xy, dtype=np.float64)
    zinv = np.ascontiguousarray(zinv, dtype=np.float64)
    if NUMBA_ENABLED:
        return _rasterize_jit(xy, zinv, height, width)
    return _rasterize_np(xy, zinv, height, width)


# ---------------------------------------------------------------------------
# ray-cast occlusion
# ---------------------------------------------------------------------------

def _occluded_np(v0, v1, v2, origin, dirs, t_max):
    # Moller-Trumbore, vectorized over candidate occluders for each ray.
    m = v0.shape[0]
    occluded = np.zeros(m, dtype=np.bool_)
    e1 = v1 - v0
    e2 = v2 - v0
    s = origin[None, :] - v0
    q = np.cross(s, e1)
    for j in range(m):
        d = dirs[j]
        p = np.cross(np.broadcast_to(d, e2.shape), e2)
        det = np.einsum("ij,ij->i", e1, p)
        ok = np.abs(det) > _AREA_EPS
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        u = np.einsum("ij,ij->i", s, p) * inv
        v = (q @ d) * inv
        t = np.einsum("ij,ij->i", e2, q) * inv
        hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > _RAY_EPS) & (t < t_max[j])
        hit[j] = False
        if hit.any():
            occluded[j] = True
    return occluded


def _occluded_loops(v0, v1, v2, origin, dirs, t_max):
    m = v0.shape[0]
    occluded = np.zeros(m, dtype=np.bool_)
    for j in range(m):
        dx = dirs[j, 0]
        dy = dirs[j, 1]
        dz = dirs[j, 2]
        limit = t_max[j]
        for k in range(m):
            if k == j:
                continue
            e1x = v1[k, 0] - v0[k, 0]
            e1y = v1[k, 1] - v0[k, 1]
            e1z = v1[k, 2] - v0[k, 2]
            e2x = v2[k, 0] - v0[k, 0]
            e2y = v2[k, 1] - v0[k, 1]
            e2z = v2[k, 2] - v0[k, 2]
            px = dy * e2z - dz * e2y
            py = dz * e2x - dx * e2z
            pz = dx * e2y - dy * e2x
            det = e1x * px + e1y * py + e1z * pz
            if abs(det) <= _AREA_EPS:
                continue
            inv = 1.0 / det
            sx = origin[0] - v0[k, 0]
            sy = origin[1] - v0[k, 1]
            sz = origin[2] - v0[k, 2]
            u = (sx * px + sy * py + sz * pz) * inv
            if u < 0.0:
                continue
            qx = sy * e1z - sz * e1y
            qy = sz * e1x - sx * e1z
            qz = sx * e1y - sy * e1x
            v = (dx * qx + dy * qy + dz * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2x * qx + e2y * qy + e2z * qz) * inv
            if _RAY_EPS < t < limit:
                occluded[j] = True
                break
    return occluded


_occluded_jit = njit(cache=True)(_occluded_loops) if NUMBA_ENABLED else None


def occluded_centroids(v0: np.ndarray, v1: np.ndarray, v2: np.ndarray,
                       origin: np.ndarray, dirs: np.ndarray, t_max: np.ndarray) -> np.ndarray:
    """For each ray ``origin + s*dirs[j]`` report whether any other triangle
    intersects it at a parameter ``s`` in ``(eps, t_max[j])``.

    ``dirs[j]`` points at triangle j's centroid (unnormalized, so s=1 lands
    on the centroid) and ``t_max[j]`` is 1 minus the caller's occlusion
    tolerance expressed in ray parameter units.
    """
    v0 = np.ascontiguousarray(v0, dtype=np.float64)
    v1 = np.ascontiguousarray(v1, dtype=np.float64)
    v2 = np.ascontiguousarray(v2, dtype=np.float64)
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    t_max = np.ascontiguousarray(t_max, dtype=np.float64)
    if NUMBA_ENABLED:
        return _occluded_jit(v0, v1, v2, origin, dirs, t_max)
    return _occluded_np(v0, v1, v2, origin, dirs, t_max)


# ---------------------------------------------------------------------------
# masked conjugate gradient on the 5-point Laplacian
# ---------------------------------------------------------------------------

def _laplace_apply_np(x, up, down, left, right):
    out = 4.0 * x
    has = up >= 0
    out[has] -= x[up[has]]
    has = down >= 0
    out[has] -= x[down[has]]
    has = left >= 0
    out[has] -= x[left[has]]
    has = right >= 0
    out[has] -= x[right[has]]
    return out


def _cg_np(b, up, down, left, right, tol, maxiter):
    n = b.shape[0]
    x = np.zeros(n, dtype=np.float64)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    if np.sqrt(rs) <= tol:
        return x, 0
    it = 0
    for it in range(1, maxiter + 1):
        ap = _laplace_apply_np(p, up, down, left, right)
        alpha = rs / float(p @ ap)
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= tol:
            return x, it
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, it


def _cg_loops(b, up, down, left, right, tol, maxiter):
    n = b.shape[0]
    x = np.zeros(n, dtype=np.float64)
    r = b.copy()
    p = r.copy()
    ap = np.zeros(n, dtype=np.float64)
    rs = 0.0
    for i in range(n):
        rs += r[i] * r[i]
    if np.sqrt(rs) <= tol:
        return x, 0
    it = 0
    for it in range(1, maxiter + 1):
        pap = 0.0
        for i in range(n):
            acc = 4.0 * p[i]
            if up[i] >= 0:
                acc -= p[up[i]]
            if down[i] >= 0:
                acc -= p[down[i]]
            if left[i] >= 0:
                acc -= p[left[i]]
            if right[i] >= 0:
                acc -= p[right[i]]
            ap[i] = acc
            pap += p[i] * acc
        alpha = rs / pap
        rs_new = 0.0
        for i in range(n):
            x[i] += alpha * p[i]
            r[i] -= alpha * ap[i]
            rs_new += r[i] * r[i]
        if np.sqrt(rs_new) <= tol:
            return x, it
        beta = rs_new / rs
        for i in range(n):
            p[i] = r[i] + beta * p[i]
        rs = rs_new
    return x, it


_cg_jit = njit(cache=True)(_cg_loops) if NUMBA_ENABLED else None


def cg_laplace(b: np.ndarray, up: np.ndarray, down: np.ndarray,
               left: np.ndarray, right: np.ndarray,
               tol: float, maxiter: int):
    """Solve ``A x = b`` by conjugate gradient where A is the 5-point
    Laplacian restricted to a masked region.

    Neighbor arrays hold the unknown index of each pixel's neighbor or -1
    when that neighbor is a Dirichlet boundary (its contribution is already
    folded into ``b``). Returns ``(x, iterations)``.
    """
    b = np.ascontiguousarray(b, dtype=np.float64)
    if NUMBA_ENABLED:
        return _cg_jit(b, up, down, left, right, float(tol), int(maxiter))
    return _cg_np(b, up, down, left, right, float(tol), int(maxiter))
