"""Shared raster and geometric value types.

Conventions used across the package: raster origin at the top-left,
row-major storage, pixel centers at integer coordinates. Intensities are
real values in [0, 1]; quantization to 8 bits happens only at file I/O.
All value types are immutable once constructed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as _PILImage

HEATMAP_SIZE = 128
# The joint count is not pinned by any upstream contract; the toy stack uses
# an OpenPose-style 18-joint layout and adapters may override.
DEFAULT_JOINT_COUNT = 18

_MIN_DEPTH = 1e-9


class NonProjectableError(ValueError):
    """Raised when a 3D point cannot be projected (at or behind the camera)."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Image:
    """A float raster, (height, width, channels) with channels 1 or 3."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"image must be (h, w, 1|3), got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must have positive size")
        if not np.isfinite(data).all():
            raise ValueError("image contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class Mask:
    """A binary raster, (height, width) with values in {0, 1}."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {data.shape}")
        uniq = np.unique(data)
        if not np.isin(uniq, (0, 1)).all():
            raise ValueError(f"mask must be binary, found values {uniq[:8]}")
        object.__setattr__(self, "data", _freeze(data.astype(np.uint8)))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def is_empty(self) -> bool:
        return not self.data.any()


@dataclass(frozen=True)
class Heatmap:
    """Per-joint likelihood fields, (joints, 128, 128) in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[1:] != (HEATMAP_SIZE, HEATMAP_SIZE):
            raise ValueError(
                f"heatmap must be (J, {HEATMAP_SIZE}, {HEATMAP_SIZE}), got {data.shape}"
            )
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("heatmap values must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def joints(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class Keypoints:
    """2D joint positions in pixel coordinates with per-point confidence.

    A confidence of 0 flags a missing point; its coordinates are ignored.
    """

    points: np.ndarray
    confidence: np.ndarray = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        conf = self.confidence
        if conf is None:
            conf = np.ones(pts.shape[0])
        conf = np.asarray(conf, dtype=np.float64).reshape(-1)
        if conf.shape[0] != pts.shape[0]:
            raise ValueError("confidence length must match point count")
        if conf.min() < 0.0 or conf.max() > 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        object.__setattr__(self, "points", _freeze(pts))
        object.__setattr__(self, "confidence", _freeze(conf))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def present(self) -> np.ndarray:
        return self.confidence > 0.0


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. Right-handed: x right, y down, z forward (in front of
    the camera means positive z in camera coordinates). ``rotation`` and
    ``translation`` map world points into camera coordinates."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.isfinite(rot).all() and np.isfinite(tr).all()):
            raise ValueError("camera extrinsics must be finite")
        object.__setattr__(self, "rotation", _freeze(rot))
        object.__setattr__(self, "translation", _freeze(tr))

    @classmethod
    def identity(cls, width: int, height: int, focal: float | None = None) -> "Camera":
        """Camera at the world origin looking down +z, principal point at the
        raster center (pixel centers at integer coordinates)."""
        f = float(focal) if focal is not None else float(max(width, height))
        return cls(fx=f, fy=f, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                   rotation=np.eye(3), translation=np.zeros(3),
                   width=width, height=height)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def project_point(camera: Camera, p) -> tuple[float, float]:
    """Perspective-project a world point to pixel coordinates.

    Raises :class:`NonProjectableError` for points at or behind the camera
    plane (this includes the camera center itself).
    """
    pc = camera.to_camera(np.asarray(p, dtype=np.float64).reshape(3))
    if pc[2] <= _MIN_DEPTH:
        raise NonProjectableError(f"point at camera depth {pc[2]:.3g} is not projectable")
    x = camera.fx * pc[0] / pc[2] + camera.cx
    y = camera.fy * pc[1] / pc[2] + camera.cy
    return float(x), float(y)


def project_points(camera: Camera, pts: np.ndarray):
    """Batch projection. Returns ``(xy, depth, valid)`` where invalid rows
    (depth <= 0) hold zeros instead of raising."""
    pc = camera.to_camera(np.asarray(pts, dtype=np.float64).reshape(-1, 3))
    depth = pc[:, 2]
    valid = depth > _MIN_DEPTH
    safe = np.where(valid, depth, 1.0)
    xy = np.zeros((pc.shape[0], 2), dtype=np.float64)
    xy[:, 0] = camera.fx * pc[:, 0] / safe + camera.cx
    xy[:, 1] = camera.fy * pc[:, 1] / safe + camera.cy
    xy[~valid] = 0.0
    return xy, depth, valid


# ---------------------------------------------------------------------------
# file I/O: PNG for images and masks, npz for heatmaps
# ---------------------------------------------------------------------------

def save_image(image: Image, path) -> None:
    arr = np.round(image.data * 255.0).astype(np.uint8)
    if image.channels == 1:
        _PILImage.fromarray(arr[:, :, 0], mode="L").save(path, format="PNG")
    else:
        _PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image(path) -> Image:
    with _PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return Image(arr)


def save_mask(mask: Mask, path) -> None:
    _PILImage.fromarray(mask.data * np.uint8(255), mode="L").save(path, format="PNG")


def load_mask(path) -> Mask:
    with _PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"))
    vals = np.unique(arr)
    if not np.isin(vals, (0, 255)).all():
        raise ValueError(f"mask PNG must contain only 0 and 255, found {vals[:8]}")
    return Mask((arr > 0).astype(np.uint8))


def save_heatmap(heatmap: Heatmap, path) -> None:
    """Container format: a .npz archive with one array under key 'heatmap'."""
    np.savez_compressed(path, heatmap=heatmap.data)


def load_heatmap(path) -> Heatmap:
    with np.load(path) as npz:
        if "heatmap" not in npz:
            raise KeyError("heatmap container missing key 'heatmap'")
        return Heatmap(npz["heatmap"])
