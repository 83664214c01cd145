"""Projective texturing, visibility labeling, rendering, and region ops.

The quantities that tie these together: a mesh posed as in the reference fit
gets per-vertex uv from projection, triangles unseen from the texturing
viewpoint are labeled invisible, and re-rendering after a pose/shape edit
yields both the coarse image and the refinement mask (pixels covered by
invisible triangles).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .body import BACKGROUND_LABEL, TexturedMesh
from .core import Camera, Image, Mask, project_points

_DEGENERATE_AREA = 1e-12
# occlusion tie tolerance, relative to scene diameter
OCCLUSION_EPS_REL = 1e-6


class PartAbsentError(ValueError):
    def __init__(self, part: int):
        super().__init__(f"part label {int(part)} not present in the label map")
        self.part = int(part)


# ---------------------------------------------------------------------------
# reflection padding
# ---------------------------------------------------------------------------

def reflect_pad(image: Image, fg_mask: Mask, band: int) -> Image:
    """Horizontal reflection padding about mask boundaries.

    Per scanline, each background pixel within ``band`` of a foreground run
    is replaced by the run's value at the mirror position about the nearest
    boundary edge: the pixel at outside distance d copies the inside pixel
    at distance d-1 from the edge (the edge pixel is duplicated once).
    Mirror positions beyond a short run clamp to the run's far end. Pixels
    contested by two runs take the nearer edge, ties going left.
    """
    if band < 0:
        raise ValueError("band must be >= 0")
    if image.height != fg_mask.height or image.width != fg_mask.width:
        raise ValueError("image and mask shapes differ")
    if band == 0 or fg_mask.is_empty() or fg_mask.data.all():
        return image

    out = image.data.copy()
    width = image.width
    for y in range(image.height):
        row = fg_mask.data[y]
        if not row.any():
            continue
        edges = np.flatnonzero(np.diff(np.concatenate(([0], row, [0]))))
        runs = list(zip(edges[0::2], edges[1::2] - 1))  # inclusive [start, end]
        source = image.data[y]
        # candidate fills: (distance, order, x, src_x); nearest edge wins, left first
        best_d = np.full(width, np.iinfo(np.int64).max, dtype=np.int64)
        best_src = np.full(width, -1, dtype=np.int64)
        for start, end in runs:
            for d in range(1, band + 1):
                x = start - d
                if x < 0:
                    break
                if row[x]:
                    break
                if d < best_d[x]:
                    best_d[x] = d
                    best_src[x] = min(start + d - 1, end)
            for d in range(1, band + 1):
                x = end + d
                if x >= width:
                    break
                if row[x]:
                    break
                if d < best_d[x]:
                    best_d[x] = d
                    best_src[x] = max(end - (d - 1), start)
        fill = best_src >= 0
        out[y, fill] = source[best_src[fill]]
    return Image(out)


# ---------------------------------------------------------------------------
# projective texture mapping and visibility
# ---------------------------------------------------------------------------

def project_texture(mesh: TexturedMesh, camera: Camera, padded_ref: Image) -> TexturedMesh:
    """Assign per-vertex uv by projecting each vertex through the camera and
    normalizing pixel coordinates to [0, 1] (by size - 1, so pixel centers
    span the full unit square). Vertices behind the camera get invalid uv
    and the triangles using them are labeled invisible."""
    xy, _, valid = project_points(camera, mesh.vertices)
    uv = np.zeros_like(xy)
    uv[:, 0] = xy[:, 0] / (padded_ref.width - 1)
    uv[:, 1] = xy[:, 1] / (padded_ref.height - 1)
    uv[~valid] = 0.0

    visibility = mesh.visibility
    if not valid.all():
        bad_tri = ~valid[mesh.triangles].all(axis=1)
        base = np.ones(mesh.triangles.shape[0], dtype=bool) if visibility is None \
            else visibility.copy()
        base[bad_tri] = False
        visibility = base
    return mesh.with_(uv=uv, uv_valid=valid, visibility=visibility)


def _triangle_normals(mesh: TexturedMesh):
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return np.cross(b - a, c - a)


def label_visibility(mesh: TexturedMesh, camera: Camera) -> TexturedMesh:
    """Cast a ray from the camera center to each triangle's centroid; a
    triangle is visible iff no other triangle intersects the ray strictly
    before the centroid (tolerance: 1e-6 of the scene diameter) and it is
    front-facing. Degenerate triangles are invisible."""
    origin = camera.center
    centroids = mesh.centroids()
    dirs = centroids - origin

    normals = _triangle_normals(mesh)
    areas2 = np.linalg.norm(normals, axis=1)
    degenerate = areas2 < _DEGENERATE_AREA
    front = np.einsum("ij,ij->i", normals, dirs) < 0.0

    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    eps_occ = OCCLUSION_EPS_REL * float(np.linalg.norm(hi - lo))
    lengths = np.linalg.norm(dirs, axis=1)
    t_max = 1.0 - eps_occ / np.maximum(lengths, 1e-30)

    v = mesh.vertices[mesh.triangles]
    occ = _kernels.occluded_centroids(v[:, 0], v[:, 1], v[:, 2], origin, dirs, t_max)

    visible = front & ~degenerate & ~occ
    if mesh.visibility is not None:
        visible &= mesh.visibility
    return mesh.with_(visibility=visible)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def sample_bilinear(texture: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear texture fetch at float pixel coordinates, clamped at edges."""
    h, w = texture.shape[:2]
    x = np.clip(x, 0.0, w - 1.0)
    y = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    top = texture[y0, x0] * (1 - fx) + texture[y0, x1] * fx
    bot = texture[y1, x0] * (1 - fx) + texture[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def render(mesh: TexturedMesh, camera: Camera, texture: Image, size,
           background: float = 0.5):
    """Z-buffered rasterization at one depth sample per pixel.

    Returns ``(image, part_label_map, invisible_mask)``: the textured render
    with a constant background fill, the front-most triangle's part label
    per pixel (background pixels carry BACKGROUND_LABEL), and the mask of
    pixels covered by invisible-labeled triangles.
    """
    if mesh.uv is None or mesh.visibility is None:
        raise ValueError("render requires a mesh with uv and visibility labels")
    if isinstance(size, int):
        out_h = out_w = size
    else:
        out_h, out_w = size

    xy, depth, valid = project_points(camera, mesh.vertices)
    tri_ok = valid[mesh.triangles].all(axis=1)
    keep = np.flatnonzero(tri_ok)

    label_map = np.full((out_h, out_w), BACKGROUND_LABEL, dtype=np.int16)
    invisible = np.zeros((out_h, out_w), dtype=np.uint8)
    img = np.full((out_h, out_w, texture.channels), float(background))

    if keep.size:
        tris = mesh.triangles[keep]
        pts = xy[tris]                       # (k, 3, 2)
        zinv = 1.0 / depth[tris]             # (k, 3)
        tri_map, bary, _ = _kernels.rasterize(pts, zinv, out_h, out_w)

        covered = tri_map >= 0
        cy, cx = np.nonzero(covered)
        local = tri_map[cy, cx]
        orig = keep[local]

        label_map[cy, cx] = mesh.part_labels[orig]
        invisible[cy, cx] = (~mesh.visibility[orig]).astype(np.uint8)

        lam = bary[cy, cx]                   # (p, 3)
        uv_tri = mesh.uv[tris[local]]        # (p, 3, 2)
        uv_pix = np.einsum("pk,pkj->pj", lam, uv_tri)
        can_sample = mesh.uv_valid[tris[local]].all(axis=1) if mesh.uv_valid is not None \
            else np.ones(len(local), dtype=bool)
        tx = uv_pix[:, 0] * (texture.width - 1)
        ty = uv_pix[:, 1] * (texture.height - 1)
        samples = sample_bilinear(texture.data, tx[can_sample], ty[can_sample])
        img[cy[can_sample], cx[can_sample]] = samples

    return Image(np.clip(img, 0.0, 1.0)), label_map, Mask(invisible)


def silhouette_from_labels(label_map: np.ndarray) -> Mask:
    return Mask((label_map != BACKGROUND_LABEL).astype(np.uint8))


# ---------------------------------------------------------------------------
# face region helpers
# ---------------------------------------------------------------------------

def face_border_mask(h: int, w: int) -> Mask:
    """Ones except a border band of width floor(0.2 * w): pixels whose
    Manhattan distance to the nearest image border is below that get 0."""
    if h <= 0 or w <= 0:
        raise ValueError("mask size must be positive")
    bw = int(np.floor(0.2 * w))
    ii, jj = np.mgrid[0:h, 0:w]
    dist = np.minimum(np.minimum(ii, jj), np.minimum(h - 1 - ii, w - 1 - jj))
    return Mask((dist >= bw).astype(np.uint8))


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of an (h, w[, c]) float array."""
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[:, :, None]
    h, w = arr.shape[:2]
    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)
    flat = sample_bilinear(arr, gx.ravel(), gy.ravel()).reshape(out_h, out_w, -1)
    return flat[:, :, 0] if squeeze else flat


@dataclass(frozen=True)
class CropPlacement:
    """Where a crop came from, sufficient to paste it back exactly."""

    y0: int
    x0: int
    height: int
    width: int
    out_size: int
    image_height: int
    image_width: int


def crop_part(image: Image, part_label_map: np.ndarray, part: int,
              out_size: int = 512, margin_ratio: float = 0.2):
    """Tight bounding box of a part, expanded by ``margin_ratio``, clipped to
    the image, and resized to ``out_size`` square. Returns the crop and the
    placement record needed to paste it back."""
    ys, xs = np.nonzero(part_label_map == int(part))
    if ys.size == 0:
        raise PartAbsentError(part)
    y0, y1 = int(ys.min()), int(ys.max())
    x0, x1 = int(xs.min()), int(xs.max())
    my = int(round(margin_ratio * (y1 - y0 + 1)))
    mx = int(round(margin_ratio * (x1 - x0 + 1)))
    y0 = max(y0 - my, 0)
    x0 = max(x0 - mx, 0)
    y1 = min(y1 + my, image.height - 1)
    x1 = min(x1 + mx, image.width - 1)
    box = image.data[y0 : y1 + 1, x0 : x1 + 1]
    crop = resize_bilinear(box, out_size, out_size)
    placement = CropPlacement(y0=y0, x0=x0, height=y1 - y0 + 1, width=x1 - x0 + 1,
                              out_size=out_size,
                              image_height=image.height, image_width=image.width)
    return Image(np.clip(crop, 0.0, 1.0)), placement
