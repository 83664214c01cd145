"""Both kernel implementations (numba loops, numpy fallback) must agree."""

import numpy as np
import pytest

from bodyedit import _kernels as K

needs_numba = pytest.mark.skipif(not K.NUMBA_ENABLED, reason="numba disabled")


def _random_triangles(rng, n):
    xy = rng.uniform(-10.0, 70.0, (n, 3, 2))
    zinv = 1.0 / rng.uniform(1.0, 5.0, (n, 3))
    return np.ascontiguousarray(xy), np.ascontiguousarray(zinv)


@needs_numba
def test_rasterize_paths_agree():
    rng = np.random.default_rng(0)
    xy, zinv = _random_triangles(rng, 150)
    tm_j, ba_j, zb_j = K._rasterize_jit(xy, zinv, 64, 64)
    tm_n, ba_n, zb_n = K._rasterize_np(xy, zinv, 64, 64)
    assert np.array_equal(tm_j, tm_n)
    assert np.allclose(ba_j, ba_n, atol=1e-12)
    covered = tm_j >= 0
    assert np.allclose(zb_j[covered], zb_n[covered], atol=1e-12)


@needs_numba
def test_occlusion_paths_agree():
    rng = np.random.default_rng(1)
    v = rng.normal(0, 1, (250, 3, 3)) + np.array([0.0, 0.0, 5.0])
    cents = v.mean(axis=1)
    origin = np.zeros(3)
    dirs = cents - origin
    t_max = 1.0 - 1e-6 / np.linalg.norm(dirs, axis=1)
    args = [np.ascontiguousarray(a) for a in (v[:, 0], v[:, 1], v[:, 2])]
    occ_j = K._occluded_jit(*args, origin, np.ascontiguousarray(dirs), t_max)
    occ_n = K._occluded_np(*args, origin, dirs, t_max)
    assert np.array_equal(occ_j, occ_n)


def _cg_problem(rng, h, w):
    region = np.zeros((h, w), bool)
    region[1:-1, 1:-1] = True
    ys, xs = np.nonzero(region)
    n = ys.size
    index = np.full((h, w), -1, np.int64)
    index[ys, xs] = np.arange(n)
    b = rng.normal(0, 1, n)
    nbr = [index[ys + dy, xs + dx] for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1))]
    return b, nbr


@needs_numba
def test_cg_paths_agree():
    rng = np.random.default_rng(2)
    b, (up, down, left, right) = _cg_problem(rng, 14, 14)
    x_j, _ = K._cg_jit(b, up, down, left, right, 1e-10, 10 * b.size)
    x_n, _ = K._cg_np(b, up, down, left, right, 1e-10, 10 * b.size)
    assert np.allclose(x_j, x_n, atol=1e-8)


def test_cg_solves_laplace_system():
    rng = np.random.default_rng(3)
    b, (up, down, left, right) = _cg_problem(rng, 12, 12)
    x, iters = K.cg_laplace(b, up, down, left, right, tol=1e-10, maxiter=10 * b.size)
    # residual check against a literal matrix assembly
    n = b.size
    a = 4.0 * np.eye(n)
    for nb in (up, down, left, right):
        for i, j in enumerate(nb):
            if j >= 0:
                a[i, j] -= 1.0
    assert np.linalg.norm(a @ x - b, ord=np.inf) < 1e-8
    assert iters <= 10 * n


def test_rasterize_depth_order():
    # two stacked triangles covering the same pixels: the nearer one wins
    xy = np.array([
        [[0.0, 0.0], [40.0, 0.0], [0.0, 40.0]],
        [[0.0, 0.0], [40.0, 0.0], [0.0, 40.0]],
    ])
    zinv = np.array([[1.0 / 4.0] * 3, [1.0 / 2.0] * 3])
    tri_map, _, _ = K.rasterize(xy, zinv, 32, 32)
    covered = tri_map >= 0
    assert covered.any()
    assert (tri_map[covered] == 1).all()


def test_rasterize_skips_degenerate():
    xy = np.array([[[5.0, 5.0], [25.0, 5.0], [15.0, 5.0]]])  # zero area
    zinv = np.ones((1, 3))
    tri_map, _, _ = K.rasterize(xy, zinv, 32, 32)
    assert (tri_map == -1).all()
