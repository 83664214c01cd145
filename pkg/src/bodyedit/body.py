"""Parametric body: the toy articulated model, fit-file ingestion, and
pose/shape editing.

The toy model is a capsule-limb figure (~1k triangles) with an OpenPose-style
18-joint reporting skeleton. Two shape axes map affinely to height and
weight; per-joint Euler rotations pose it. It stands in a y-down world (the
camera convention), facing the camera, so its face hemisphere points toward
-z in the rest pose.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from enum import IntEnum
from typing import Protocol

import numpy as np

from .core import Camera, Keypoints, Mask, _freeze


class BodyPart(IntEnum):
    HEAD = 0
    FACE = 1
    TORSO = 2
    LEFT_UPPER_ARM = 3
    LEFT_LOWER_ARM = 4
    RIGHT_UPPER_ARM = 5
    RIGHT_LOWER_ARM = 6
    LEFT_UPPER_LEG = 7
    LEFT_LOWER_LEG = 8
    RIGHT_UPPER_LEG = 9
    RIGHT_LOWER_LEG = 10


BACKGROUND_LABEL = -1


class FitSchemaError(KeyError):
    """A fit file is missing or mangles a required key."""

    def __init__(self, key: str):
        super().__init__(key)
        self.key = key

    def __str__(self) -> str:
        return f"fit file missing required key: {self.key!r}"


class PoseClampWarning(UserWarning):
    """A requested joint rotation exceeded the limit and was clamped."""


@dataclass(frozen=True)
class BodyParams:
    """Pose (per-joint Euler XYZ, flattened), two shape coefficients, the
    physical attributes they encode, and the global placement."""

    pose: np.ndarray
    shape: np.ndarray
    height_m: float
    weight_kg: float
    root_rotation: np.ndarray
    root_translation: np.ndarray

    def __post_init__(self):
        if self.height_m <= 0 or self.weight_kg <= 0:
            raise ValueError("height and weight must be positive")
        for name in ("pose", "shape", "root_rotation", "root_translation"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, _freeze(arr))


@dataclass(frozen=True)
class TexturedMesh:
    """Triangle mesh plus the per-triangle part labels, optional projected
    uv coordinates, and optional visibility flags."""

    vertices: np.ndarray
    triangles: np.ndarray
    part_labels: np.ndarray
    uv: np.ndarray | None = None
    uv_valid: np.ndarray | None = None
    visibility: np.ndarray | None = None

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        tris = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        labels = np.asarray(self.part_labels, dtype=np.int16).reshape(-1)
        if tris.size and (tris.min() < 0 or tris.max() >= verts.shape[0]):
            raise ValueError("triangle indices out of range")
        if labels.shape[0] != tris.shape[0]:
            raise ValueError("part_labels must be per-triangle")
        valid_labels = np.array([p.value for p in BodyPart])
        if labels.size and not np.isin(labels, valid_labels).all():
            raise ValueError("part_labels outside the fixed body-part label set")
        object.__setattr__(self, "vertices", _freeze(verts))
        object.__setattr__(self, "triangles", _freeze(tris))
        object.__setattr__(self, "part_labels", _freeze(labels))
        for name, dtype, width in (("uv", np.float64, 2), ("uv_valid", bool, 0),
                                   ("visibility", bool, 0)):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.asarray(val, dtype=dtype)
            arr = arr.reshape(-1, width) if width else arr.reshape(-1)
            n = verts.shape[0] if name in ("uv", "uv_valid") else tris.shape[0]
            if arr.shape[0] != n:
                raise ValueError(f"{name} has wrong length")
            object.__setattr__(self, name, _freeze(arr))

    def with_(self, **kw) -> "TexturedMesh":
        return replace(self, **kw)

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)


class BodyModel(Protocol):
    """Deterministic map from parameters to a mesh and reporting skeleton."""

    name: str
    joint_count: int
    shape_dim: int

    def rest_params(self) -> BodyParams: ...

    def mesh(self, params: BodyParams) -> TexturedMesh: ...

    def skeleton(self, params: BodyParams) -> np.ndarray: ...

    def shape_from_attributes(self, height_m: float, weight_kg: float) -> np.ndarray: ...

    def head_orientation(self, params: BodyParams) -> tuple[float, float]: ...


# ---------------------------------------------------------------------------
# toy capsule-limb model
# ---------------------------------------------------------------------------

# kinematic joints: (name, parent index, rest offset from parent)
_KIN = [
    ("pelvis", -1, (0.0, 0.0, 0.0)),
    ("spine", 0, (0.0, -0.25, 0.0)),
    ("neck", 1, (0.0, -0.30, 0.0)),
    ("head", 2, (0.0, -0.15, 0.0)),
    ("l_shoulder", 2, (0.20, 0.03, 0.0)),
    ("l_elbow", 4, (0.28, 0.0, 0.0)),
    ("l_wrist", 5, (0.26, 0.0, 0.0)),
    ("r_shoulder", 2, (-0.20, 0.03, 0.0)),
    ("r_elbow", 7, (-0.28, 0.0, 0.0)),
    ("r_wrist", 8, (-0.26, 0.0, 0.0)),
    ("l_hip", 0, (0.10, 0.05, 0.0)),
    ("l_knee", 10, (0.0, 0.40, 0.0)),
    ("l_ankle", 11, (0.0, 0.38, 0.0)),
    ("r_hip", 0, (-0.10, 0.05, 0.0)),
    ("r_knee", 13, (0.0, 0.40, 0.0)),
    ("r_ankle", 14, (0.0, 0.38, 0.0)),
]
KIN_JOINT_NAMES = [k[0] for k in _KIN]
_KIN_INDEX = {n: i for i, n in enumerate(KIN_JOINT_NAMES)}
POSE_DOF = len(_KIN) * 3
JOINT_ROTATION_LIMIT = 2.7  # radians per Euler component

# capsule bones: (from joint, to joint, radius, part label)
_BONES = [
    ("pelvis", "spine", 0.13, BodyPart.TORSO),
    ("spine", "neck", 0.14, BodyPart.TORSO),
    ("neck", "head", 0.05, BodyPart.TORSO),
    ("l_shoulder", "l_elbow", 0.045, BodyPart.LEFT_UPPER_ARM),
    ("l_elbow", "l_wrist", 0.040, BodyPart.LEFT_LOWER_ARM),
    ("r_shoulder", "r_elbow", 0.045, BodyPart.RIGHT_UPPER_ARM),
    ("r_elbow", "r_wrist", 0.040, BodyPart.RIGHT_LOWER_ARM),
    ("l_hip", "l_knee", 0.070, BodyPart.LEFT_UPPER_LEG),
    ("l_knee", "l_ankle", 0.050, BodyPart.LEFT_LOWER_LEG),
    ("r_hip", "r_knee", 0.070, BodyPart.RIGHT_UPPER_LEG),
    ("r_knee", "r_ankle", 0.050, BodyPart.RIGHT_LOWER_LEG),
]
_HEAD_RADIUS = 0.11

# OpenPose BODY-18 reporting joints. Entries are either a kinematic joint
# name or (head-local offset) markers attached to the head joint.
OPENPOSE_NAMES = [
    "nose", "neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder",
    "l_elbow", "l_wrist", "r_hip", "r_knee", "r_ankle", "l_hip", "l_knee",
    "l_ankle", "r_eye", "l_eye", "r_ear", "l_ear",
]
_HEAD_MARKERS = {
    "nose": (0.0, 0.02, -_HEAD_RADIUS),
    "r_eye": (-0.040, -0.030, -0.098),
    "l_eye": (0.040, -0.030, -0.098),
    "r_ear": (-0.105, 0.0, -0.02),
    "l_ear": (0.105, 0.0, -0.02),
}


def euler_to_matrix(angles) -> np.ndarray:
    """Rotation matrix for intrinsic X-Y-Z Euler angles."""
    ax, ay, az = float(angles[0]), float(angles[1]), float(angles[2])
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rx @ ry @ rz


def _orthonormal_frame(axis: np.ndarray):
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v


def _lathe(profile, axis_a, axis_dir, u, v, n_seg):
    """Rotate a (distance-along-axis, radius) profile around the axis."""
    verts = []
    rows = []
    for d, rho in profile:
        center = axis_a + axis_dir * d
        if rho == 0.0:
            rows.append([len(verts)])
            verts.append(center)
            continue
        row = []
        for s in range(n_seg):
            ang = 2.0 * np.pi * s / n_seg
            row.append(len(verts))
            verts.append(center + (u * np.cos(ang) + v * np.sin(ang)) * rho)
        rows.append(row)
    tris = []
    for r0, r1 in zip(rows[:-1], rows[1:]):
        if len(r0) == 1:
            for s in range(n_seg):
                tris.append((r0[0], r1[s], r1[(s + 1) % n_seg]))
        elif len(r1) == 1:
            for s in range(n_seg):
                tris.append((r0[s], r1[0], r0[(s + 1) % n_seg]))
        else:
            for s in range(n_seg):
                s2 = (s + 1) % n_seg
                tris.append((r0[s], r1[s], r1[s2]))
                tris.append((r0[s], r1[s2], r0[s2]))
    return np.array(verts), np.array(tris, dtype=np.int64)


def _capsule(a, b, radius, n_seg=10, n_cap=2):
    axis = b - a
    length = np.linalg.norm(axis)
    axis_dir = axis / length
    u, v = _orthonormal_frame(axis_dir)
    profile = [(-radius, 0.0)]
    for i in range(1, n_cap + 1):
        th = 0.5 * np.pi * i / n_cap
        profile.append((-radius * np.cos(th), radius * np.sin(th)))
    for i in range(n_cap, -1, -1):
        th = 0.5 * np.pi * i / n_cap
        profile.append((length + radius * np.cos(th), radius * np.sin(th)))
    return _lathe(profile, a, axis_dir, u, v, n_seg)


def _sphere(center, radius, rot, n_seg=10, n_lat=6):
    # poles along local -z/+z so the -z hemisphere is the face side
    local_profile = [(-radius, 0.0)]
    for i in range(1, n_lat):
        th = np.pi * i / n_lat
        local_profile.append((-radius * np.cos(th), radius * np.sin(th)))
    local_profile.append((radius, 0.0))
    axis_dir = rot @ np.array([0.0, 0.0, 1.0])
    u = rot @ np.array([1.0, 0.0, 0.0])
    v = rot @ np.array([0.0, 1.0, 0.0])
    return _lathe(local_profile, center, axis_dir, u, v, n_seg)


def _orient_outward(verts, tris, inside_point):
    """Flip triangles whose normal points toward the given interior point."""
    a = verts[tris[:, 0]]
    n = np.cross(verts[tris[:, 1]] - a, verts[tris[:, 2]] - a)
    centroids = verts[tris].mean(axis=1)
    flip = np.einsum("ij,ij->i", n, centroids - inside_point) < 0
    tris = tris.copy()
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return tris


class ToyBodyModel:
    """Capsule-limb articulated figure with affine height/weight shape axes."""

    name = "toy"
    joint_count = len(OPENPOSE_NAMES)
    shape_dim = 2

    HEIGHT_BASE = 1.70
    WEIGHT_BASE = 70.0
    HEIGHT_COEF = 0.10   # height_m = HEIGHT_BASE * (1 + HEIGHT_COEF * shape[0])
    WEIGHT_COEF = 0.25   # weight_kg = WEIGHT_BASE * (1 + WEIGHT_COEF * shape[1])

    def shape_from_attributes(self, height_m: float, weight_kg: float) -> np.ndarray:
        s0 = (height_m / self.HEIGHT_BASE - 1.0) / self.HEIGHT_COEF
        s1 = (weight_kg / self.WEIGHT_BASE - 1.0) / self.WEIGHT_COEF
        return np.array([s0, s1])

    def attributes_from_shape(self, shape: np.ndarray) -> tuple[float, float]:
        h = self.HEIGHT_BASE * (1.0 + self.HEIGHT_COEF * float(shape[0]))
        w = self.WEIGHT_BASE * (1.0 + self.WEIGHT_COEF * float(shape[1]))
        return h, w

    def rest_params(self) -> BodyParams:
        return BodyParams(
            pose=np.zeros(POSE_DOF),
            shape=np.zeros(2),
            height_m=self.HEIGHT_BASE,
            weight_kg=self.WEIGHT_BASE,
            root_rotation=np.zeros(3),
            root_translation=np.array([0.0, 0.03, 2.6]),
        )

    def _scales(self, params: BodyParams) -> tuple[float, float]:
        length_scale = params.height_m / self.HEIGHT_BASE
        mass_ratio = params.weight_kg / self.WEIGHT_BASE
        radius_scale = np.sqrt(max(mass_ratio / length_scale, 0.04))
        return length_scale, radius_scale

    def _forward_kinematics(self, params: BodyParams):
        length_scale, _ = self._scales(params)
        pose = params.pose.reshape(-1, 3)
        root_rot = euler_to_matrix(params.root_rotation)
        pos = np.zeros((len(_KIN), 3))
        rot = np.zeros((len(_KIN), 3, 3))
        for i, (_, parent, offset) in enumerate(_KIN):
            local = euler_to_matrix(pose[i])
            if parent < 0:
                rot[i] = root_rot @ local
                pos[i] = params.root_translation
            else:
                pos[i] = pos[parent] + rot[parent] @ (np.asarray(offset) * length_scale)
                rot[i] = rot[parent] @ local
        return pos, rot

    def mesh(self, params: BodyParams) -> TexturedMesh:
        length_scale, radius_scale = self._scales(params)
        pos, rot = self._forward_kinematics(params)
        all_verts, all_tris, all_labels = [], [], []
        offset = 0
        for frm, to, radius, label in _BONES:
            a = pos[_KIN_INDEX[frm]]
            b = pos[_KIN_INDEX[to]]
            r = radius * length_scale * radius_scale
            verts, tris = _capsule(a, b, r)
            tris = _orient_outward(verts, tris, (a + b) / 2.0)
            all_verts.append(verts)
            all_tris.append(tris + offset)
            all_labels.append(np.full(len(tris), int(label)))
            offset += len(verts)
        head_i = _KIN_INDEX["head"]
        head_r = _HEAD_RADIUS * length_scale * radius_scale
        verts, tris = _sphere(pos[head_i], head_r, rot[head_i])
        tris = _orient_outward(verts, tris, pos[head_i])
        # the face is the camera-side hemisphere of the head in its local frame
        local_c = (verts[tris].mean(axis=1) - pos[head_i]) @ rot[head_i]
        labels = np.where(local_c[:, 2] < 0.0, int(BodyPart.FACE), int(BodyPart.HEAD))
        all_verts.append(verts)
        all_tris.append(tris + offset)
        all_labels.append(labels)
        return TexturedMesh(
            vertices=np.concatenate(all_verts),
            triangles=np.concatenate(all_tris),
            part_labels=np.concatenate(all_labels),
        )

    def skeleton(self, params: BodyParams) -> np.ndarray:
        pos, rot = self._forward_kinematics(params)
        length_scale, radius_scale = self._scales(params)
        out = np.zeros((self.joint_count, 3))
        head_i = _KIN_INDEX["head"]
        for j, name in enumerate(OPENPOSE_NAMES):
            if name in _HEAD_MARKERS:
                local = np.asarray(_HEAD_MARKERS[name]) * length_scale * radius_scale
                out[j] = pos[head_i] + rot[head_i] @ local
            else:
                out[j] = pos[_KIN_INDEX[name]]
        return out

    def head_orientation(self, params: BodyParams) -> tuple[float, float]:
        """(yaw, pitch) of the face direction relative to straight-at-camera,
        in radians. Positive yaw turns the face toward the viewer's left."""
        _, rot = self._forward_kinematics(params)
        face_dir = rot[_KIN_INDEX["head"]] @ np.array([0.0, 0.0, -1.0])
        yaw = float(np.arctan2(-face_dir[0], -face_dir[2]))
        pitch = float(np.arctan2(face_dir[1], np.hypot(face_dir[0], face_dir[2])))
        return yaw, pitch


# ---------------------------------------------------------------------------
# pose and shape editing
# ---------------------------------------------------------------------------

def _clamp_pose(pose: np.ndarray) -> np.ndarray:
    clipped = np.clip(pose, -JOINT_ROTATION_LIMIT, JOINT_ROTATION_LIMIT)
    if not np.array_equal(clipped, pose):
        warnings.warn("joint rotation outside limits was clamped", PoseClampWarning)
    return clipped

# planar-IK bone table: (kinematic joint to rotate, openpose from, openpose to)
_IK_BONES = [
    ("neck", 1, 0),
    ("l_shoulder", 5, 6),
    ("l_elbow", 6, 7),
    ("r_shoulder", 2, 3),
    ("r_elbow", 3, 4),
    ("l_hip", 11, 12),
    ("l_knee", 12, 13),
    ("r_hip", 8, 9),
    ("r_knee", 9, 10),
]


def _rest_bone_angles(model: ToyBodyModel) -> dict[str, float]:
    rest = model.rest_params()
    skel = model.skeleton(rest)
    angles = {}
    for joint, kp_from, kp_to in _IK_BONES:
        d = skel[kp_to] - skel[kp_from]
        angles[joint] = float(np.arctan2(d[1], d[0]))
    return angles


def _pose_from_keypoints(model: ToyBodyModel, target: Keypoints) -> np.ndarray:
    """In-plane retargeting: per-bone image-plane angles become z-rotations.

    Rotations about the view axis compose additively down the chain, so the
    local z-angle is the desired world angle minus the ancestors' total.
    """
    if len(target) != model.joint_count:
        raise ValueError(f"expected {model.joint_count} keypoints, got {len(target)}")
    rest_angles = _rest_bone_angles(model)
    pose = np.zeros((len(_KIN), 3))
    accum = np.zeros(len(_KIN))
    wanted = {joint: (f, t) for joint, f, t in _IK_BONES}
    for i, (name, parent, _) in enumerate(_KIN):
        if parent >= 0:
            accum[i] = accum[parent]
        if name not in wanted:
            continue
        kp_from, kp_to = wanted[name]
        if not (target.present[kp_from] and target.present[kp_to]):
            continue
        d = target.points[kp_to] - target.points[kp_from]
        if np.hypot(d[0], d[1]) < 1e-9:
            continue
        phi = float(np.arctan2(d[1], d[0]))
        world = phi - rest_angles[name]
        local = (world - accum[i] + np.pi) % (2.0 * np.pi) - np.pi
        pose[i, 2] = local
        accum[i] += local
    return pose.reshape(-1)


def edit_params(model: BodyModel, params: BodyParams,
                target_pose=None,
                height_m: float | None = None,
                weight_kg: float | None = None) -> BodyParams:
    """Re-pose and/or re-shape. ``target_pose`` is either a pose vector
    (per-joint Euler angles) or :class:`Keypoints` for in-plane retargeting.
    Returns the input object unchanged for an identity edit."""
    new_h = params.height_m if height_m is None else float(height_m)
    new_w = params.weight_kg if weight_kg is None else float(weight_kg)
    if new_h <= 0 or new_w <= 0:
        raise ValueError("height and weight must be positive")

    if target_pose is None:
        new_pose = params.pose
    elif isinstance(target_pose, Keypoints):
        new_pose = _clamp_pose(_pose_from_keypoints(model, target_pose))
    else:
        new_pose = np.asarray(target_pose, dtype=np.float64).reshape(-1)
        if new_pose.shape[0] != params.pose.shape[0]:
            raise ValueError(f"pose vector must have {params.pose.shape[0]} entries")
        new_pose = _clamp_pose(new_pose)

    if (new_h == params.height_m and new_w == params.weight_kg
            and np.array_equal(new_pose, params.pose)):
        return params

    new_shape = model.shape_from_attributes(new_h, new_w)
    return replace(params, pose=new_pose, shape=new_shape,
                   height_m=new_h, weight_kg=new_w)


# ---------------------------------------------------------------------------
# fit files
# ---------------------------------------------------------------------------

_FIT_KEYS = ("pose", "shape", "height_m", "weight_kg",
             "root_rotation", "root_translation", "camera")
_CAMERA_KEYS = ("intrinsics", "rotation", "translation", "width", "height")
_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy")


def save_fit(path, params: BodyParams, camera: Camera) -> None:
    doc = {
        "pose": params.pose.tolist(),
        "shape": params.shape.tolist(),
        "height_m": params.height_m,
        "weight_kg": params.weight_kg,
        "root_rotation": params.root_rotation.tolist(),
        "root_translation": params.root_translation.tolist(),
        "camera": {
            "intrinsics": {"fx": camera.fx, "fy": camera.fy,
                           "cx": camera.cx, "cy": camera.cy},
            "rotation": camera.rotation.tolist(),
            "translation": camera.translation.tolist(),
            "width": camera.width, "height": camera.height,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_fit(path) -> tuple[BodyParams, Camera]:
    with open(path) as fh:
        doc = json.load(fh)
    for key in _FIT_KEYS:
        if key not in doc:
            raise FitSchemaError(key)
    for key in _CAMERA_KEYS:
        if key not in doc["camera"]:
            raise FitSchemaError(f"camera.{key}")
    for key in _INTRINSIC_KEYS:
        if key not in doc["camera"]["intrinsics"]:
            raise FitSchemaError(f"camera.intrinsics.{key}")
    cam = doc["camera"]
    intr = cam["intrinsics"]
    camera = Camera(fx=float(intr["fx"]), fy=float(intr["fy"]),
                    cx=float(intr["cx"]), cy=float(intr["cy"]),
                    rotation=np.asarray(cam["rotation"], dtype=np.float64),
                    translation=np.asarray(cam["translation"], dtype=np.float64),
                    width=int(cam["width"]), height=int(cam["height"]))
    params = BodyParams(
        pose=np.asarray(doc["pose"], dtype=np.float64),
        shape=np.asarray(doc["shape"], dtype=np.float64),
        height_m=float(doc["height_m"]),
        weight_kg=float(doc["weight_kg"]),
        root_rotation=np.asarray(doc["root_rotation"], dtype=np.float64),
        root_translation=np.asarray(doc["root_translation"], dtype=np.float64),
    )
    return params, camera


def _silhouette_bbox(mask_data: np.ndarray):
    ys, xs = np.nonzero(mask_data)
    if ys.size == 0:
        return None
    return (float(ys.max() - ys.min() + 1),
            float(ys.max() + ys.min()) / 2.0,
            float(xs.max() + xs.min()) / 2.0)


def _project_silhouette(model: "ToyBodyModel", params: BodyParams,
                        camera: Camera) -> np.ndarray:
    # silhouette only: rasterize coverage, visibility labels irrelevant
    from .core import Image
    from .texturing import project_texture, render
    mesh = model.mesh(params)
    flat = Image(np.full((camera.height, camera.width, 1), 0.5))
    mesh = project_texture(mesh, camera, flat)
    if mesh.visibility is None:
        mesh = mesh.with_(visibility=np.ones(mesh.triangles.shape[0], bool))
    _, label_map, _ = render(mesh, camera, flat, (camera.height, camera.width))
    return label_map != BACKGROUND_LABEL


def fit_to_silhouette(model: "ToyBodyModel", silhouette: Mask, camera: Camera,
                      refine_steps: int = 3, climb_rounds: int = 4) -> BodyParams:
    """Coarse rest-pose fit: solve length scale and root translation from the
    silhouette's bounding box, correct by re-rendering a few times, then
    hill-climb scale/offset on silhouette overlap."""
    target = _silhouette_bbox(silhouette.data)
    if target is None:
        raise ValueError("empty silhouette")
    tgt_h, tgt_cy, tgt_cx = target
    tgt_mask = silhouette.data.astype(bool)

    rest = model.rest_params()
    mesh = model.mesh(rest)
    rel = mesh.vertices - rest.root_translation
    extent0 = rel[:, 1].max() - rel[:, 1].min()

    tz = rest.root_translation[2]
    scale = (tgt_h * tz / camera.fy) / extent0
    ty = (tgt_cy - camera.cy) * tz / camera.fy
    tx = (tgt_cx - camera.cx) * tz / camera.fx

    def build(s, x, y):
        height = model.HEIGHT_BASE * s
        shape = model.shape_from_attributes(height, rest.weight_kg)
        return replace(rest, shape=shape, height_m=height,
                       root_translation=np.array([x, y, tz]))

    def iou(params):
        got = _project_silhouette(model, params, camera)
        inter = np.logical_and(got, tgt_mask).sum()
        union = np.logical_or(got, tgt_mask).sum()
        return inter / union if union else 0.0

    for _ in range(refine_steps + 1):
        got = _silhouette_bbox(_project_silhouette(model, build(scale, tx, ty), camera))
        if got is None:
            break
        got_h, got_cy, got_cx = got
        scale *= tgt_h / got_h
        ty += (tgt_cy - got_cy) * tz / camera.fy
        tx += (tgt_cx - got_cx) * tz / camera.fx

    # greedy sub-pixel polish on the overlap itself
    best = iou(build(scale, tx, ty))
    step_px = 0.5
    for _ in range(climb_rounds):
        d_move = step_px * tz / camera.fy
        d_scale = step_px / tgt_h
        improved = True
        while improved:
            improved = False
            for ds, dx, dy in ((d_scale, 0, 0), (-d_scale, 0, 0), (0, d_move, 0),
                               (0, -d_move, 0), (0, 0, d_move), (0, 0, -d_move)):
                cand = iou(build(scale * (1 + ds), tx + dx, ty + dy))
                if cand > best:
                    best = cand
                    scale *= 1 + ds
                    tx += dx
                    ty += dy
                    improved = True
        step_px /= 2.0
    return build(scale, tx, ty)


# ---------------------------------------------------------------------------
# mesh exchange (OBJ-like with a per-triangle part extension section)
# ---------------------------------------------------------------------------

def save_mesh(path, mesh: TexturedMesh) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}")
    if mesh.uv is not None:
        for t in mesh.uv:
            lines.append(f"vt {float(t[0])!r} {float(t[1])!r}")
    for tri in mesh.triangles:
        a, b, c = (int(i) + 1 for i in tri)
        if mesh.uv is not None:
            lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
        else:
            lines.append(f"f {a} {b} {c}")
    # extension: one part label per face, in face order
    for label in mesh.part_labels:
        lines.append(f"part {int(label)}")
    if mesh.visibility is not None:
        for vis in mesh.visibility:
            lines.append(f"vis {int(vis)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path) -> TexturedMesh:
    verts, uvs, tris, labels, vis = [], [], [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif parts[0] == "f":
                tris.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
            elif parts[0] == "part":
                labels.append(int(parts[1]))
            elif parts[0] == "vis":
                vis.append(bool(int(parts[1])))
    return TexturedMesh(
        vertices=np.asarray(verts),
        triangles=np.asarray(tris),
        part_labels=np.asarray(labels),
        uv=np.asarray(uvs) if uvs else None,
        uv_valid=np.ones(len(verts), dtype=bool) if uvs else None,
        visibility=np.asarray(vis) if vis else None,
    )
