"""The refinement engine: masked blended denoising, loss-driven best-iterate
selection, text-embedding optimization, and input reinitialization.

One refinement block runs N weak-noise repair cycles. Each cycle encodes the
working image, forward-noises it to 30% of the schedule while storing every
intermediate, then denoises; after every reverse step, latent cells outside
the refinement mask are overwritten with the stored forward map for that
timestep, so only masked content can change. The text embedding is updated
each iteration (Adam under a warmup-then-cosine learning rate), the working
image is reset to the initial render every R iterations so the embedding
keeps optimizing from a stable input, and the iterate with the lowest stage
loss wins.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .backend import (Backend, Conditioning, LatentMap, RunContext,
                      TextEmbedding, denoise_step, q_sample_trajectory)
from .body import BodyPart
from .core import Image, Keypoints, Mask
from .losses import (LossWeights, aw_loss, clip_part_loss, clip_part_loss_grad,
                     id_loss, keypoint_loss, total_face, total_fullbody)
from .texturing import crop_part, face_border_mask, resize_bilinear

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8
_FD_STEP = 1e-3
_FD_DIMS = 16


class RefinementWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RefinementConfig:
    """Schedule hyperparameters for one refinement stage."""

    noise_strength: float = 0.30
    iterations: int = 100
    reinit_period: int = 5
    lr_min: float = 4.0e-4
    lr_max: float = 5.0e-4
    warmup_steps: int = 10
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    ancestral_noise: float = 1.0
    optimize_embedding: bool = True
    crop_margin: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.noise_strength <= 1.0:
            raise ValueError("noise_strength must lie in (0, 1]")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.reinit_period < 1:
            raise ValueError("reinit_period must be >= 1")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")


@dataclass(frozen=True)
class IterationRecord:
    index: int
    image: Image
    components: dict[str, float]
    total: float
    embedding_id: int


# ---------------------------------------------------------------------------
# masked blended denoising
# ---------------------------------------------------------------------------

def downsample_mask(mask: Mask, factor: int) -> np.ndarray:
    """A latent cell is masked iff any pixel it covers is masked, so a cell
    is frozen only when every pixel under it is frozen."""
    h, w = mask.data.shape
    if h % factor or w % factor:
        raise ValueError(f"mask size must be a multiple of {factor}")
    blocks = mask.data.reshape(h // factor, factor, w // factor, factor)
    return blocks.max(axis=(1, 3)).astype(np.float64)


def refine_once(image: Image, mask: Mask, embedding: TextEmbedding,
                keypoints: Keypoints | None, cfg: RefinementConfig,
                backend: Backend, rng: np.random.Generator,
                trace: list | None = None) -> Image:
    """One weak-noise repair cycle with outside-mask trajectory replacement.

    With an empty mask there is nothing to refine: the codec round trip of
    the input is returned and a no-op warning is recorded. When ``trace`` is
    a list, every post-replacement latent is appended as ``(t, array)`` for
    instrumentation.
    """
    if mask.is_empty():
        warnings.warn("empty refinement mask: returning codec round trip",
                      RefinementWarning)
        return backend.decode(backend.encode(image))

    x0 = backend.encode(image)
    factor = image.height // x0.shape[0]
    lmask = downsample_mask(mask, factor)[:, :, None]

    trajectory = q_sample_trajectory(backend.schedule, x0, cfg.noise_strength, rng)
    cond = Conditioning(embedding=embedding, keypoints=keypoints,
                        keypoint_raster=rasterize_skeleton(keypoints, image.height, image.width)
                        if keypoints is not None else None)
    x = LatentMap(trajectory.at(trajectory.t_start))
    for t in range(trajectory.t_start, 0, -1):
        x_prev = denoise_step(backend, x, t, cond, rng, cfg.ancestral_noise)
        blended = lmask * x_prev.data + (1.0 - lmask) * trajectory.at(t - 1)
        if trace is not None:
            trace.append((t - 1, blended.copy()))
        x = LatentMap(blended)
    return backend.decode(x)


def rasterize_skeleton(keypoints: Keypoints, height: int, width: int,
                       sigma: float = 1.5) -> np.ndarray:
    """Condition raster: Gaussian splats at the target joints."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.zeros((height, width))
    for i in range(len(keypoints)):
        if not keypoints.present[i]:
            continue
        px, py = keypoints.points[i]
        out = np.maximum(out, np.exp(-((xs - px) ** 2 + (ys - py) ** 2)
                                     / (2.0 * sigma * sigma)))
    return out[:, :, None]


# ---------------------------------------------------------------------------
# embedding optimization
# ---------------------------------------------------------------------------

def learning_rate(step: int, cfg: RefinementConfig) -> float:
    """Linear ramp to lr_max over the warmup steps, then cosine decay to
    lr_min at the final iteration. ``step`` is 1-based."""
    warm = cfg.warmup_steps
    if warm > 0 and step <= warm:
        return cfg.lr_max * step / warm
    span = cfg.iterations - warm
    if span <= 0:
        return cfg.lr_max
    progress = (step - warm) / span
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + np.cos(np.pi * progress))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(m=np.zeros(dim), v=np.zeros(dim))


def optimize_embedding(embedding: TextEmbedding, gradient: np.ndarray, step: int,
                       cfg: RefinementConfig,
                       state: AdamState | None = None) -> tuple[TextEmbedding, AdamState]:
    """One Adam update of the conditioning vector at the scheduled learning
    rate. A non-finite gradient skips the update with a warning."""
    if state is None:
        state = AdamState.zeros(embedding.dim)
    gradient = np.asarray(gradient, dtype=np.float64).reshape(-1)
    if gradient.shape[0] != embedding.dim:
        raise ValueError("gradient dimension does not match the embedding")
    if not np.isfinite(gradient).all():
        warnings.warn("non-finite embedding gradient: update skipped",
                      RefinementWarning)
        return embedding, state
    state.count += 1
    state.m = _ADAM_BETA1 * state.m + (1.0 - _ADAM_BETA1) * gradient
    state.v = _ADAM_BETA2 * state.v + (1.0 - _ADAM_BETA2) * gradient ** 2
    m_hat = state.m / (1.0 - _ADAM_BETA1 ** state.count)
    v_hat = state.v / (1.0 - _ADAM_BETA2 ** state.count)
    lr = learning_rate(step, cfg)
    new_vec = embedding.vector - lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
    return TextEmbedding(new_vec), state


# ---------------------------------------------------------------------------
# stage losses
# ---------------------------------------------------------------------------

class FullbodyStageLoss:
    """Adaptive Wing against the rendered model's heatmaps plus per-part
    similarity to the reference. Only the similarity term feeds the analytic
    image gradient; the pose term is left out of the gradient by design (the
    toy pose features are not meant to be differentiated)."""

    def __init__(self, reference: Image, part_label_map: np.ndarray,
                 target_heatmap, backend: Backend,
                 weights: LossWeights = LossWeights()):
        self.reference = reference
        self.part_label_map = part_label_map
        self.target_heatmap = target_heatmap
        self.backend = backend
        self.weights = weights

    def components(self, image: Image) -> dict[str, float]:
        heat, _ = self.backend.estimate_pose(image)
        return {
            "aw": aw_loss(heat, self.target_heatmap),
            "clip": clip_part_loss(self.reference, image, self.part_label_map,
                                   self.backend.embed_part),
        }

    def total(self, components: dict[str, float]) -> float:
        return total_fullbody(components, self.weights)

    def image_gradient(self, image: Image) -> np.ndarray:
        g = clip_part_loss_grad(self.reference, image, self.part_label_map,
                                self.backend.embed_part)
        return self.weights.clip_body * g


class FaceStageLoss:
    """Identity + whole-crop similarity + landmark agreement for the face
    stage. The similarity term carries the analytic image gradient."""

    def __init__(self, reference_face: Image, target_landmarks: Keypoints,
                 backend: Backend, weights: LossWeights = LossWeights()):
        self.reference_face = reference_face
        self.target_landmarks = target_landmarks
        self.backend = backend
        self.weights = weights
        self._full_map = np.zeros(
            (reference_face.height, reference_face.width), dtype=np.int16)
        self._full_map[:] = int(BodyPart.FACE)

    def components(self, image: Image) -> dict[str, float]:
        landmarks = self.backend.face_landmarks(image)
        return {
            "id": id_loss(self.reference_face, image, self.backend.embed_identity),
            "clip": -float(self.backend.embed_part(self.reference_face)
                           @ self.backend.embed_part(image)),
            "keypoint": keypoint_loss(landmarks, self.target_landmarks),
        }

    def total(self, components: dict[str, float]) -> float:
        return total_face(components, self.weights)

    def image_gradient(self, image: Image) -> np.ndarray:
        g = clip_part_loss_grad(self.reference_face, image, self._full_map,
                                self.backend.embed_part)
        return self.weights.effective_clip_face * g


# ---------------------------------------------------------------------------
# the refinement block
# ---------------------------------------------------------------------------

def _iteration_rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, iteration]))


def _embedding_gradient(backend, stage_loss, image, embedding, mask, cfg,
                        iteration, base_input, base_total):
    """Analytic path when both sides support it, otherwise finite differences
    on a random 16-dim subspace (step 1e-3) with the iteration's exact rng."""
    g_img = stage_loss.image_gradient(image)
    if g_img is not None and hasattr(backend, "embedding_vjp"):
        # pixels clamped by the decoder have zero derivative
        interior = (image.data > 0.0) & (image.data < 1.0)
        g_img = g_img * interior
        x0_shape = backend.encode(base_input).shape
        factor = base_input.height // x0_shape[0]
        lmask = downsample_mask(mask, factor)
        t_start = int(round(cfg.noise_strength * backend.schedule.total_steps))
        return backend.embedding_vjp(g_img, lmask, t_start, embedding)

    dims_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, iteration, 977]))
    dims = dims_rng.choice(embedding.dim, size=min(_FD_DIMS, embedding.dim),
                           replace=False)
    grad = np.zeros(embedding.dim)
    for d in dims:
        probe = embedding.vector.copy()
        probe[d] += _FD_STEP
        out = refine_once(base_input, mask, TextEmbedding(probe), None, cfg,
                          backend, _iteration_rng(cfg.seed, iteration))
        total = stage_loss.total(stage_loss.components(out))
        grad[d] = (total - base_total) / _FD_STEP
    return grad


def run_block(initial: Image, mask: Mask, embedding0: TextEmbedding,
              keypoints: Keypoints | None, stage_loss, cfg: RefinementConfig,
              backend: Backend,
              input_probe: list | None = None) -> tuple[Image, list[IterationRecord]]:
    """Iterate refine / score / update-embedding, reinitializing the working
    image every ``reinit_period`` iterations, and return the loss-minimal
    iterate (earliest wins ties) together with the full record list.

    The embedding and its optimizer moments persist across
    reinitializations; only the image resets. ``input_probe``, when given,
    receives the input image of every iteration (instrumentation).
    """
    embedding = embedding0
    state = AdamState.zeros(embedding.dim)
    records: list[IterationRecord] = []
    x = initial
    for i in range(1, cfg.iterations + 1):
        if input_probe is not None:
            input_probe.append(x)
        rng = _iteration_rng(cfg.seed, i)
        try:
            out = refine_once(x, mask, embedding, keypoints, cfg, backend, rng)
            components = stage_loss.components(out)
        except Exception as exc:
            raise type(exc)(f"iteration {i}: {exc}") from exc
        total = stage_loss.total(components)
        records.append(IterationRecord(index=i, image=out, components=components,
                                       total=total, embedding_id=i))
        if cfg.optimize_embedding and not mask.is_empty():
            grad = _embedding_gradient(backend, stage_loss, out, embedding, mask,
                                       cfg, i, x, total)
            embedding, state = optimize_embedding(embedding, grad, i, cfg, state)
        x = initial if i % cfg.reinit_period == 0 else out
    best = min(records, key=lambda r: (r.total, r.index))
    return best.image, records


# ---------------------------------------------------------------------------
# the two pipeline stages
# ---------------------------------------------------------------------------

def step1_fullbody(rendered: Image, invisible_mask: Mask, prompt: str,
                   keypoints: Keypoints, reference: Image,
                   part_label_map: np.ndarray, cfg: RefinementConfig,
                   backend: Backend) -> tuple[Image, list[IterationRecord]]:
    """Fullbody repair: refine the invisible areas of the rendered model,
    scored against the rendered heatmaps and the reference's parts."""
    embedding0 = backend.encode_text(prompt)
    if hasattr(backend, "begin_run"):
        backend.begin_run(RunContext(initial=rendered, part_label_map=part_label_map))
    target_heat, _ = backend.estimate_pose(rendered)
    stage_loss = FullbodyStageLoss(reference, part_label_map, target_heat,
                                   backend, cfg.weights)
    best, records = run_block(rendered, invisible_mask, embedding0, keypoints,
                              stage_loss, cfg, backend)
    if hasattr(backend, "end_run"):
        backend.end_run()
    return best, records


def _crop_label_map(part_label_map: np.ndarray, placement, out_size: int) -> np.ndarray:
    box = part_label_map[placement.y0 : placement.y0 + placement.height,
                         placement.x0 : placement.x0 + placement.width]
    ys = np.clip(np.round(np.linspace(0, box.shape[0] - 1, out_size)).astype(int),
                 0, box.shape[0] - 1)
    xs = np.clip(np.round(np.linspace(0, box.shape[1] - 1, out_size)).astype(int),
                 0, box.shape[1] - 1)
    return box[np.ix_(ys, xs)]


def step2_face(step1_out: Image, part_label_map: np.ndarray, prompt_face: str,
               reference_face: Image, rendered: Image, cfg: RefinementConfig,
               backend: Backend, identity: bool = False):
    """Facial repair: crop the face region to 512x512, refine its interior
    (the outer 20% band is frozen), and blend the result back in.

    Returns ``(face_image, records, placement)``; the caller composes the
    final image with the gradient-domain blender. ``identity=True`` skips
    refinement and returns the crop unchanged (the zero-iterations switch).
    When the face part is absent, a warning is issued and ``None`` placement
    signals that the fullbody output should be used as-is.
    """
    face_label = int(BodyPart.FACE)
    if not (part_label_map == face_label).any():
        warnings.warn("no face pixels: facial refinement skipped", RefinementWarning)
        return step1_out, [], None
    crop, placement = crop_part(step1_out, part_label_map, face_label,
                                out_size=512, margin_ratio=cfg.crop_margin)
    if identity:
        return crop, [], placement

    mask = face_border_mask(crop.height, crop.width)
    embedding0 = backend.encode_text(prompt_face)
    if hasattr(backend, "begin_run"):
        backend.begin_run(RunContext(
            initial=crop,
            part_label_map=_crop_label_map(part_label_map, placement, crop.height)))
    rendered_box = rendered.data[placement.y0 : placement.y0 + placement.height,
                                 placement.x0 : placement.x0 + placement.width]
    rendered_face = Image(np.clip(resize_bilinear(rendered_box, crop.height,
                                                  crop.width), 0.0, 1.0))
    target_landmarks = backend.face_landmarks(rendered_face)
    if reference_face.data.shape != crop.data.shape:
        reference_face = Image(np.clip(resize_bilinear(
            reference_face.data, crop.height, crop.width), 0.0, 1.0))
    stage_loss = FaceStageLoss(reference_face, target_landmarks, backend, cfg.weights)
    best, records = run_block(crop, mask, embedding0, None, stage_loss, cfg, backend)
    if hasattr(backend, "end_run"):
        backend.end_run()
    return best, records, placement


def records_report(records: list[IterationRecord], cfg: RefinementConfig) -> dict:
    """Reproducibility record for one refinement run."""
    best = min(records, key=lambda r: (r.total, r.index)).index if records else None
    return {
        "chosen_iteration": best,
        "iterations": [
            {"index": r.index, "total": r.total, "components": dict(r.components)}
            for r in records
        ],
        "config": {
            "noise_strength": cfg.noise_strength,
            "iterations": cfg.iterations,
            "reinit_period": cfg.reinit_period,
            "lr_min": cfg.lr_min,
            "lr_max": cfg.lr_max,
            "warmup_steps": cfg.warmup_steps,
            "seed": cfg.seed,
            "ancestral_noise": cfg.ancestral_noise,
            "optimize_embedding": cfg.optimize_embedding,
        },
        "seed": cfg.seed,
    }
