"""Gradient-domain merging of the refined face into the fullbody result.

Inside the blend region the output solves the discrete Poisson equation with
the source's Laplacian as guidance and the destination as Dirichlet
boundary; outside it the destination passes through untouched. Small
regions (up to 256 unknowns) go through a dense direct solve, larger ones
through conjugate gradient on the 5-point Laplacian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import Image, Mask
from .texturing import CropPlacement, resize_bilinear

DENSE_LIMIT = 256
CG_TOL = 1e-8


class RegionTouchesBorderError(ValueError):
    pass


@dataclass(frozen=True)
class BlendProblem:
    source: Image
    destination: Image
    region: Mask

    def __post_init__(self):
        if self.source.data.shape != self.destination.data.shape:
            raise ValueError("source and destination shapes differ")
        if (self.region.height, self.region.width) != \
                (self.destination.height, self.destination.width):
            raise ValueError("region shape does not match the images")


def _laplacian(channel: np.ndarray) -> np.ndarray:
    lap = 4.0 * channel.copy()
    lap[1:, :] -= channel[:-1, :]
    lap[:-1, :] -= channel[1:, :]
    lap[:, 1:] -= channel[:, :-1]
    lap[:, :-1] -= channel[:, 1:]
    return lap


def _solve_channel(src: np.ndarray, dst: np.ndarray, region: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(region)
    n = ys.size
    index = np.full(region.shape, -1, dtype=np.int64)
    index[ys, xs] = np.arange(n)

    guidance = _laplacian(src)
    b = guidance[ys, xs].astype(np.float64)

    neighbors = []
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny, nx = ys + dy, xs + dx
        nb = index[ny, nx]
        outside = nb < 0
        b[outside] += dst[ny[outside], nx[outside]]
        neighbors.append(nb)
    up, down, left, right = neighbors

    if n <= DENSE_LIMIT:
        a = np.zeros((n, n))
        a[np.arange(n), np.arange(n)] = 4.0
        for nb in neighbors:
            inside = nb >= 0
            a[np.arange(n)[inside], nb[inside]] = -1.0
        x = np.linalg.solve(a, b)
    else:
        x, _ = _kernels.cg_laplace(b, up, down, left, right,
                                   tol=CG_TOL, maxiter=10 * n)

    out = dst.copy()
    out[ys, xs] = x
    return out


def poisson_blend(problem: BlendProblem) -> Image:
    """Solve the blend per channel. The region must stay strictly inside the
    image so every unknown has a defined Dirichlet boundary."""
    region = problem.region.data.astype(bool)
    if not region.any():
        return problem.destination
    if region[0, :].any() or region[-1, :].any() or \
            region[:, 0].any() or region[:, -1].any():
        raise RegionTouchesBorderError(
            "blend region touches the image border; no boundary condition there")

    src = problem.source.data
    dst = problem.destination.data
    out = np.empty_like(dst)
    for c in range(dst.shape[2]):
        out[:, :, c] = _solve_channel(src[:, :, c], dst[:, :, c], region)
    out[~region] = dst[~region]  # outside the region: bitwise destination
    return Image(np.clip(out, 0.0, 1.0))


def paste_face(body: Image, face: Image, placement: CropPlacement,
               region: Mask | None = None) -> Image:
    """Resize the refined face back to its source box and blend it in.

    ``region`` defaults to the face stage's interior mask (everything but
    the frozen 20% border band) mapped into the box.
    """
    if placement.image_height != body.height or placement.image_width != body.width:
        raise ValueError("placement does not match the destination image")
    y0, x0 = placement.y0, placement.x0
    y1, x1 = y0 + placement.height, x0 + placement.width
    if y0 < 0 or x0 < 0 or y1 > body.height or x1 > body.width:
        raise ValueError("placement out of bounds")

    restored = resize_bilinear(face.data, placement.height, placement.width)
    source = body.data.copy()
    source[y0:y1, x0:x1] = np.clip(restored, 0.0, 1.0)

    if region is None:
        from .texturing import face_border_mask
        inner = face_border_mask(face.height, face.width).data.astype(np.float64)
        inner_box = resize_bilinear(inner, placement.height, placement.width)
        region_full = np.zeros((body.height, body.width), dtype=np.uint8)
        region_full[y0:y1, x0:x1] = (inner_box > 0.5).astype(np.uint8)
        # the blend region must not touch the destination border
        region_full[0, :] = region_full[-1, :] = 0
        region_full[:, 0] = region_full[:, -1] = 0
        region = Mask(region_full)

    return poisson_blend(BlendProblem(source=Image(np.clip(source, 0.0, 1.0)),
                                      destination=body, region=region))
