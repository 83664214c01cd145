"""Stage loss functions and their weighted totals.

Fullbody refinement scores a candidate by heatmap agreement with the
rendered model (Adaptive Wing penalty) plus per-part appearance similarity
to the reference (negated embedding dot products, so minimizing the total
maximizes similarity). Facial refinement swaps in identity, whole-crop
similarity, and landmark terms. Weight defaults: fullbody 0.002 / 2, face
10 / 10 / 0.1, with the similarity and identity weights halved when the
body shape is being edited.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import BACKGROUND_LABEL
from .core import Heatmap, Image, Keypoints

# Adaptive Wing defaults (the canonical constants of this penalty; they are
# exposed so configs can override).
AW_ALPHA = 2.1
AW_OMEGA = 14.0
AW_EPSILON = 1.0
AW_THETA = 0.5


@dataclass(frozen=True)
class LossWeights:
    aw: float = 0.002
    clip_body: float = 2.0
    id_face: float = 10.0
    clip_face: float = 10.0
    keypoint: float = 0.1
    shape_edit: bool = False

    def __post_init__(self):
        for name in ("aw", "clip_body", "id_face", "clip_face", "keypoint"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")

    @property
    def effective_id(self) -> float:
        return self.id_face / 2.0 if self.shape_edit else self.id_face

    @property
    def effective_clip_face(self) -> float:
        return self.clip_face / 2.0 if self.shape_edit else self.clip_face


# ---------------------------------------------------------------------------
# adaptive wing
# ---------------------------------------------------------------------------

def _aw_linear_constants(y: np.ndarray, alpha, omega, eps, theta):
    expo = alpha - y
    ratio = (theta / eps) ** expo
    a = omega * (1.0 / (1.0 + ratio)) * expo * (theta / eps) ** (expo - 1.0) / eps
    c = theta * a - omega * np.log1p(ratio)
    return a, c


def aw_loss(pred: Heatmap, target: Heatmap,
            alpha: float = AW_ALPHA, omega: float = AW_OMEGA,
            eps: float = AW_EPSILON, theta: float = AW_THETA) -> float:
    """Adaptive Wing penalty between heatmaps, averaged over every pixel of
    every joint: logarithmic near zero error, linear beyond ``theta``, with
    the linear branch constants chosen for C1 continuity at the seam."""
    if pred.data.shape != target.data.shape:
        raise ValueError("heatmap shapes differ")
    y = target.data
    d = np.abs(pred.data - y)
    expo = alpha - y
    small = omega * np.log1p((d / eps) ** expo)
    a, c = _aw_linear_constants(y, alpha, omega, eps, theta)
    large = a * d - c
    return float(np.where(d < theta, small, large).mean())


def aw_loss_grad(pred: Heatmap, target: Heatmap,
                 alpha: float = AW_ALPHA, omega: float = AW_OMEGA,
                 eps: float = AW_EPSILON, theta: float = AW_THETA) -> np.ndarray:
    """Analytic gradient of :func:`aw_loss` with respect to ``pred``."""
    if pred.data.shape != target.data.shape:
        raise ValueError("heatmap shapes differ")
    y = target.data
    diff = pred.data - y
    d = np.abs(diff)
    expo = alpha - y
    ratio = np.where(d > 0, (d / eps) ** (expo - 1.0), 0.0)
    small = omega * expo * ratio / eps / (1.0 + ratio * d / eps)
    a, _ = _aw_linear_constants(y, alpha, omega, eps, theta)
    slope = np.where(d < theta, small, a)
    return np.sign(diff) * slope / pred.data.size


# ---------------------------------------------------------------------------
# part-wise appearance similarity
# ---------------------------------------------------------------------------

def _part_boxes(part_label_map: np.ndarray):
    boxes = {}
    for part in np.unique(part_label_map):
        if part == BACKGROUND_LABEL:
            continue
        ys, xs = np.nonzero(part_label_map == part)
        boxes[int(part)] = (ys.min(), ys.max() + 1, xs.min(), xs.max() + 1)
    return boxes


def clip_part_loss(reference: Image, output: Image, part_label_map: np.ndarray,
                   embedder) -> float:
    """Negated sum of embedding dot products over the body parts present in
    the label map; both images are cropped with the same per-part boxes."""
    boxes = _part_boxes(part_label_map)
    if not boxes:
        raise ValueError("no body parts present in the label map")
    total = 0.0
    for part, (y0, y1, x0, x1) in sorted(boxes.items()):
        ref_e = embedder(Image(reference.data[y0:y1, x0:x1]))
        out_e = embedder(Image(output.data[y0:y1, x0:x1]))
        total += float(ref_e @ out_e)
    return -total


def clip_part_loss_grad(reference: Image, output: Image, part_label_map: np.ndarray,
                        embedder) -> np.ndarray:
    """Gradient of :func:`clip_part_loss` w.r.t. the output pixels, valid for
    embedders of the normalized-flatten form."""
    boxes = _part_boxes(part_label_map)
    if not boxes:
        raise ValueError("no body parts present in the label map")
    grad = np.zeros_like(output.data)
    for part, (y0, y1, x0, x1) in sorted(boxes.items()):
        ref_e = embedder(Image(reference.data[y0:y1, x0:x1]))
        crop = output.data[y0:y1, x0:x1]
        flat = crop.reshape(-1)
        norm = np.linalg.norm(flat)
        if norm == 0.0:
            continue
        out_e = flat / norm
        g = -(ref_e - float(ref_e @ out_e) * out_e) / norm
        grad[y0:y1, x0:x1] += g.reshape(crop.shape)
    return grad


# ---------------------------------------------------------------------------
# keypoints and identity
# ---------------------------------------------------------------------------

def keypoint_loss(pred: Keypoints, target: Keypoints) -> float:
    """Mean squared coordinate error over points present in both sets (the
    mean runs over coordinates, two per point)."""
    if len(pred) != len(target):
        raise ValueError(f"keypoint counts differ: {len(pred)} vs {len(target)}")
    both = pred.present & target.present
    if not both.any():
        raise ValueError("no keypoints present in both sets")
    diff = pred.points[both] - target.points[both]
    return float(np.mean(diff ** 2))


def id_loss(ref_face: Image, out_face: Image, embedder) -> float:
    """1 minus cosine similarity of the identity embeddings, in [0, 2]."""
    a = embedder(ref_face)
    b = embedder(out_face)
    return float(1.0 - a @ b)


# ---------------------------------------------------------------------------
# stage totals
# ---------------------------------------------------------------------------

def total_fullbody(components: dict[str, float],
                   weights: LossWeights = LossWeights()) -> float:
    return weights.aw * components["aw"] + weights.clip_body * components["clip"]


def total_face(components: dict[str, float],
               weights: LossWeights = LossWeights()) -> float:
    return (weights.effective_id * components["id"]
            + weights.effective_clip_face * components["clip"]
            + weights.keypoint * components["keypoint"])
