"""Latent codec, noise schedule, denoiser, text encoder, and perception
interfaces, plus a deterministic toy implementation of each.

The toy backend makes the whole pipeline runnable without pretrained
weights: its codec is an exactly invertible space-to-depth transform, its
denoiser is a pointwise-linear pull toward a personalization target (so
reverse diffusion is a contraction and per-run behavior is analyzable), and
its perception models are deterministic functions of pixel statistics.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .body import BACKGROUND_LABEL
from .core import (DEFAULT_JOINT_COUNT, HEATMAP_SIZE, Heatmap, Image,
                   Keypoints, _freeze)
from .texturing import resize_bilinear


class BackendError(RuntimeError):
    pass


class EmbeddingFailure(BackendError):
    """An embedder could not produce a unit vector for the given input."""


@dataclass(frozen=True)
class LatentMap:
    """Codec-space feature grid, (cells_h, cells_w, channels)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError("latent map must be (h, w, c)")
        if not np.isfinite(data).all():
            raise ValueError("latent map must be finite")
        object.__setattr__(self, "data", _freeze(data))

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class TextEmbedding:
    """The optimizable conditioning vector."""

    vector: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if not np.isfinite(vec).all():
            raise ValueError("embedding must be finite")
        object.__setattr__(self, "vector", _freeze(vec))

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule with cumulative products, alpha_bar[0] = 1."""

    betas: np.ndarray
    alpha_bar: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        if betas.size == 0 or betas.min() <= 0.0 or betas.max() >= 1.0:
            raise ValueError("betas must lie in (0, 1)")
        if (np.diff(betas) < 0).any():
            raise ValueError("betas must be non-decreasing")
        abar = np.concatenate(([1.0], np.cumprod(1.0 - betas)))
        object.__setattr__(self, "betas", _freeze(betas))
        object.__setattr__(self, "alpha_bar", _freeze(abar))

    @classmethod
    def linear(cls, steps: int = 1000, beta_start: float = 1e-4,
               beta_end: float = 2e-2) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, steps))

    @property
    def total_steps(self) -> int:
        return self.betas.shape[0]

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def posterior_variance(self, t: int) -> float:
        return self.beta(t) * (1.0 - self.alpha_bar[t - 1]) / (1.0 - self.alpha_bar[t])


@dataclass(frozen=True)
class NoiseTrajectory:
    """Stored forward-noised latents, indexable by timestep: entry t holds
    x_t, and entry 0 is the encoded input, bit-exact."""

    data: np.ndarray  # (t_start + 1, h, w, c)

    def __post_init__(self):
        object.__setattr__(self, "data", _freeze(np.asarray(self.data, dtype=np.float64)))

    @property
    def t_start(self) -> int:
        return self.data.shape[0] - 1

    def at(self, t: int) -> np.ndarray:
        return self.data[t]


@dataclass
class Conditioning:
    """What the denoiser is conditioned on: the text embedding and a
    rasterized-skeleton rendering of the target keypoints (adapters may
    reinterpret the raster)."""

    embedding: TextEmbedding
    keypoints: Keypoints | None = None
    keypoint_raster: np.ndarray | None = None


@dataclass
class RunContext:
    """Per-run information the toy backend uses to build its pull target.
    Real adapters are free to ignore it."""

    initial: Image
    part_label_map: np.ndarray | None = None
    head_yaw_pitch: tuple[float, float] | None = None


class Backend(Protocol):
    """Interface bundle for every neural component the pipeline consumes."""

    name: str
    schedule: NoiseSchedule

    def encode(self, image: Image) -> LatentMap: ...

    def decode(self, latent: LatentMap) -> Image: ...

    def predict_noise(self, x_t: LatentMap, t: int, cond: Conditioning) -> np.ndarray: ...

    def encode_text(self, prompt: str) -> TextEmbedding: ...

    def estimate_pose(self, image: Image) -> tuple[Heatmap, Keypoints]: ...

    def embed_part(self, crop: Image) -> np.ndarray: ...

    def embed_identity(self, face: Image) -> np.ndarray: ...

    def face_landmarks(self, face: Image) -> Keypoints: ...

    def face_orientation(self, image: Image) -> str: ...

    def personalize(self, reference: Image, face_crop: Image, token: str,
                    part_means: dict[int, np.ndarray] | None = None) -> "Backend": ...


# ---------------------------------------------------------------------------
# forward trajectory and the ancestral reverse step
# ---------------------------------------------------------------------------

def q_sample_trajectory(schedule: NoiseSchedule, x0: LatentMap, strength: float,
                        rng: np.random.Generator) -> NoiseTrajectory:
    """Forward-noise the input at every step up to round(strength * T),
    drawing fresh noise per step, and keep all of them for outside-mask
    replacement during the reverse pass."""
    if not 0.0 < strength <= 1.0:
        raise ValueError(f"noise strength must lie in (0, 1], got {strength}")
    t_start = int(round(strength * schedule.total_steps))
    arr = np.empty((t_start + 1,) + x0.shape, dtype=np.float64)
    arr[0] = x0.data
    for t in range(1, t_start + 1):
        abar = schedule.alpha_bar[t]
        eps = rng.standard_normal(x0.shape)
        arr[t] = np.sqrt(abar) * x0.data + np.sqrt(1.0 - abar) * eps
    return NoiseTrajectory(arr)


def denoise_step(backend: Backend, x_t: LatentMap, t: int, cond: Conditioning,
                 rng: np.random.Generator, noise_scale: float = 1.0) -> LatentMap:
    """One ancestral reverse step x_t -> x_{t-1}. No noise is added at t=1.
    ``noise_scale`` scales the posterior standard deviation (0 gives the
    deterministic mean-only update)."""
    sched = backend.schedule
    eps_hat = backend.predict_noise(x_t, t, cond)
    if not np.isfinite(eps_hat).all():
        raise BackendError(f"non-finite noise prediction at step t={t}")
    beta = sched.beta(t)
    abar = sched.alpha_bar[t]
    alpha = 1.0 - beta
    mean = (x_t.data - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    if t > 1 and noise_scale > 0.0:
        sigma = np.sqrt(sched.posterior_variance(t)) * noise_scale
        mean = mean + sigma * rng.standard_normal(x_t.shape)
    return LatentMap(mean)


# ---------------------------------------------------------------------------
# toy backend
# ---------------------------------------------------------------------------

def _hash_rng(*parts: str) -> np.random.Generator:
    digest = hashlib.sha256("\x1f".join(parts).encode()).digest()
    return np.random.default_rng(np.frombuffer(digest, dtype=np.uint64))


def _luminance(data: np.ndarray) -> np.ndarray:
    if data.shape[2] == 1:
        return data[:, :, 0]
    return 0.299 * data[:, :, 0] + 0.587 * data[:, :, 1] + 0.114 * data[:, :, 2]


class ToyBackend:
    """Deterministic stand-in for the pretrained stack.

    Codec: space-to-depth with factor 4 (exactly invertible, so pixels in
    unmasked latent cells survive refinement bit-for-bit). Denoiser: per-cell
    linear pull toward a personalization target plus the analytically
    consistent noise term; the text embedding shifts the target through a
    fixed projection, which keeps the output differentiable with respect to
    the embedding. Perception models are pixel-statistics functions.
    """

    name = "toy"
    DOWNSCALE = 4
    EMBED_DIM = 64
    EMBED_SCALE = 0.05

    def __init__(self, total_steps: int = 1000, prior_spread: float = 0.15,
                 seed: int = 7, joint_count: int = DEFAULT_JOINT_COUNT,
                 token: str | None = None,
                 reference: Image | None = None,
                 face_reference: Image | None = None,
                 part_means: dict[int, np.ndarray] | None = None):
        if prior_spread <= 0.0:
            raise ValueError("prior_spread must be positive")
        self.schedule = NoiseSchedule.linear(total_steps)
        self.prior_spread = float(prior_spread)
        self.seed = int(seed)
        self.joint_count = int(joint_count)
        self.token = token
        self.reference = reference
        self.face_reference = face_reference
        self.part_means = dict(part_means) if part_means else None
        self._context: RunContext | None = None
        self._canvas_latent: np.ndarray | None = None
        # fixed embedding-to-channel-bias projections, built lazily per
        # latent channel count from the backend seed
        self._proj_cache: dict[int, np.ndarray] = {}

    # -- codec ---------------------------------------------------------------

    def encode(self, image: Image) -> LatentMap:
        f = self.DOWNSCALE
        h, w, c = image.data.shape
        if h % f or w % f:
            raise ValueError(f"image size must be a multiple of {f}, got {h}x{w}")
        blocks = image.data.reshape(h // f, f, w // f, f, c)
        latent = blocks.transpose(0, 2, 1, 3, 4).reshape(h // f, w // f, f * f * c)
        return LatentMap(latent)

    def decode(self, latent: LatentMap) -> Image:
        f = self.DOWNSCALE
        hh, ww, cc = latent.shape
        c = cc // (f * f)
        blocks = latent.data.reshape(hh, ww, f, f, c).transpose(0, 2, 1, 3, 4)
        img = blocks.reshape(hh * f, ww * f, c)
        return Image(np.clip(img, 0.0, 1.0))

    # -- conditioning --------------------------------------------------------

    def encode_text(self, prompt: str) -> TextEmbedding:
        rng = _hash_rng("toy-text", prompt)
        vec = rng.standard_normal(self.EMBED_DIM) / np.sqrt(self.EMBED_DIM)
        return TextEmbedding(vec)

    def _projection(self, channels: int) -> np.ndarray:
        if channels not in self._proj_cache:
            rng = _hash_rng("toy-proj", str(self.seed), str(channels))
            self._proj_cache[channels] = rng.standard_normal(
                (channels, self.EMBED_DIM)) / np.sqrt(self.EMBED_DIM)
        return self._proj_cache[channels]

    def begin_run(self, context: RunContext) -> None:
        """Install the per-run pull target: each pixel takes its part's
        reference mean color when available, else the initial pixel."""
        self._context = context
        canvas = context.initial.data.copy()
        if context.part_label_map is not None and self.part_means:
            labels = context.part_label_map
            for part, mean in self.part_means.items():
                sel = labels == part
                if sel.any():
                    canvas[sel] = np.asarray(mean, dtype=np.float64)
        self._canvas_latent = self.encode(Image(np.clip(canvas, 0.0, 1.0))).data

    def end_run(self) -> None:
        self._context = None
        self._canvas_latent = None

    def _target_latent(self, shape) -> np.ndarray:
        if self._canvas_latent is not None and self._canvas_latent.shape == tuple(shape):
            return self._canvas_latent
        if self.reference is not None:
            fill = self.reference.data.reshape(-1, self.reference.channels).mean(axis=0)
        else:
            fill = 0.5
        f = self.DOWNSCALE
        c = shape[2] // (f * f)
        const = np.broadcast_to(np.resize(np.asarray(fill), c),
                                (shape[0] * f, shape[1] * f, c))
        return self.encode(Image(np.ascontiguousarray(const))).data

    def _embedding_bias(self, embedding: TextEmbedding, channels: int) -> np.ndarray:
        proj = self._projection(channels)
        return self.EMBED_SCALE * np.tanh(proj @ embedding.vector)

    def predict_noise(self, x_t: LatentMap, t: int, cond: Conditioning) -> np.ndarray:
        """Gaussian-posterior denoiser under a prior N(target, tau^2) on the
        clean latent: unbiased when little noise remains, pulling toward the
        personalization target when much does. Linear in both x_t and the
        target, which keeps the embedding gradient analytic."""
        abar = self.schedule.alpha_bar[t]
        tau2 = self.prior_spread ** 2
        target = self._target_latent(x_t.shape) + \
            self._embedding_bias(cond.embedding, x_t.shape[2])[None, None, :]
        denom = abar * tau2 + (1.0 - abar)
        return np.sqrt(1.0 - abar) * (x_t.data - np.sqrt(abar) * target) / denom

    # -- analytic gradient support -------------------------------------------

    def target_coefficient(self, t_start: int) -> float:
        """Coefficient of the pull target in the final latent of a full
        reverse pass from t_start (per unmasked cell). The denoiser is
        pointwise linear, so this is a scalar recursion over the schedule."""
        coef = 0.0
        tau2 = self.prior_spread ** 2
        for t in range(t_start, 0, -1):
            beta = self.schedule.beta(t)
            abar = self.schedule.alpha_bar[t]
            alpha = 1.0 - beta
            denom = abar * tau2 + (1.0 - abar)
            a_t = (1.0 - beta / denom) / np.sqrt(alpha)
            b_t = beta * np.sqrt(abar) / (denom * np.sqrt(alpha))
            coef = a_t * coef + b_t
        return float(coef)

    def embedding_vjp(self, g_image: np.ndarray, latent_mask: np.ndarray,
                      t_start: int, embedding: TextEmbedding) -> np.ndarray:
        """Pull the gradient of a scalar loss w.r.t. the output image back to
        the text embedding, using the linear structure of the toy denoiser.
        Cells outside the refinement mask contribute nothing (they are
        overwritten by the stored trajectory)."""
        g_latent = self.encode_gradient(g_image)
        kappa = self.target_coefficient(t_start)
        masked = g_latent * latent_mask[:, :, None]
        per_channel = masked.sum(axis=(0, 1)) * kappa
        proj = self._projection(g_latent.shape[2])
        u = proj @ embedding.vector
        gain = self.EMBED_SCALE * (1.0 - np.tanh(u) ** 2)
        return proj.T @ (per_channel * gain)

    def encode_gradient(self, g_image: np.ndarray) -> np.ndarray:
        """The codec is a permutation, so gradients move through the same
        rearrangement as pixels."""
        f = self.DOWNSCALE
        h, w, c = g_image.shape
        blocks = g_image.reshape(h // f, f, w // f, f, c)
        return blocks.transpose(0, 2, 1, 3, 4).reshape(h // f, w // f, f * f * c)

    # -- perception ----------------------------------------------------------

    def _grid_cells(self, h: int, w: int):
        rows, cols = 6, 3
        assert rows * cols == self.joint_count
        for j in range(self.joint_count):
            r, c = divmod(j, cols)
            y0, y1 = int(h * r / rows), int(h * (r + 1) / rows)
            x0, x1 = int(w * c / cols), int(w * (c + 1) / cols)
            yield j, y0, max(y1, y0 + 1), x0, max(x1, x0 + 1)

    def estimate_pose(self, image: Image) -> tuple[Heatmap, Keypoints]:
        """Keypoints are intensity-weighted centroids over a fixed grid of
        sectors; heatmaps are sigma=2 Gaussian bumps at those points on the
        128x128 grid."""
        lum = _luminance(image.data) + 1e-6
        h, w = lum.shape
        pts = np.zeros((self.joint_count, 2))
        for j, y0, y1, x0, x1 in self._grid_cells(h, w):
            cell = lum[y0:y1, x0:x1]
            total = cell.sum()
            ys, xs = np.mgrid[y0:y1, x0:x1]
            pts[j, 0] = float((cell * xs).sum() / total)
            pts[j, 1] = float((cell * ys).sum() / total)
        heat = self._bumps(pts, h, w)
        return heat, Keypoints(pts)

    def _bumps(self, pts: np.ndarray, img_h: int, img_w: int,
               sigma: float = 2.0) -> Heatmap:
        n = HEATMAP_SIZE
        gx = pts[:, 0] * (n - 1) / max(img_w - 1, 1)
        gy = pts[:, 1] * (n - 1) / max(img_h - 1, 1)
        ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
        maps = np.exp(-((xs[None] - gx[:, None, None]) ** 2 +
                        (ys[None] - gy[:, None, None]) ** 2) / (2.0 * sigma * sigma))
        return Heatmap(maps)

    def heatmap_from_keypoints(self, kp: Keypoints, img_h: int, img_w: int) -> Heatmap:
        return self._bumps(kp.points, img_h, img_w)

    def embed_part(self, crop: Image) -> np.ndarray:
        flat = crop.data.reshape(-1)
        norm = np.linalg.norm(flat)
        if norm == 0.0:
            raise EmbeddingFailure("cannot embed an all-black crop")
        return flat / norm

    def embed_identity(self, face: Image) -> np.ndarray:
        small = resize_bilinear(_luminance(face.data), 32, 32).reshape(-1)
        norm = np.linalg.norm(small)
        if norm == 0.0:
            raise EmbeddingFailure("cannot embed an all-black face")
        return small / norm

    def face_landmarks(self, face: Image) -> Keypoints:
        """Five landmarks (eyes, nose, mouth corners) as intensity centroids
        of fixed face regions."""
        lum = _luminance(face.data) + 1e-6
        h, w = lum.shape
        regions = [
            (0.15, 0.50, 0.10, 0.50),   # right eye (viewer left)
            (0.15, 0.50, 0.50, 0.90),   # left eye
            (0.35, 0.70, 0.30, 0.70),   # nose
            (0.60, 0.95, 0.15, 0.50),   # mouth right
            (0.60, 0.95, 0.50, 0.85),   # mouth left
        ]
        pts = np.zeros((5, 2))
        for i, (fy0, fy1, fx0, fx1) in enumerate(regions):
            y0, y1 = int(fy0 * h), max(int(fy1 * h), int(fy0 * h) + 1)
            x0, x1 = int(fx0 * w), max(int(fx1 * w), int(fx0 * w) + 1)
            cell = lum[y0:y1, x0:x1]
            total = cell.sum()
            ys, xs = np.mgrid[y0:y1, x0:x1]
            pts[i, 0] = float((cell * xs).sum() / total)
            pts[i, 1] = float((cell * ys).sum() / total)
        return Keypoints(pts)

    def face_orientation(self, image: Image) -> str:
        """Orientation word from the run context's head yaw/pitch; 'front'
        when no context is installed."""
        if self._context is None or self._context.head_yaw_pitch is None:
            return "front"
        yaw, pitch = self._context.head_yaw_pitch
        threshold = np.deg2rad(15.0)
        if abs(yaw) > np.pi - threshold:
            return "back"
        if abs(yaw) >= abs(pitch):
            if yaw > threshold:
                return "left"
            if yaw < -threshold:
                return "right"
        if pitch > threshold:
            return "down"
        if pitch < -threshold:
            return "up"
        return "front"

    # -- personalization -----------------------------------------------------

    def personalize(self, reference: Image, face_crop: Image, token: str,
                    part_means: dict[int, np.ndarray] | None = None) -> "ToyBackend":
        """Bind the token to the reference person. The toy backend stores the
        reference and its per-part mean colors; the denoiser pulls toward
        them. Personalizing twice with the same inputs is a no-op."""
        if not token:
            raise ValueError("personalization token must be non-empty")
        return type(self)(total_steps=self.schedule.total_steps,
                          prior_spread=self.prior_spread,
                          seed=self.seed, joint_count=self.joint_count,
                          token=token, reference=reference,
                          face_reference=face_crop, part_means=part_means)


def part_mean_colors(image: Image, part_label_map: np.ndarray) -> dict[int, np.ndarray]:
    """Mean color of the image under each part label present in the map."""
    means: dict[int, np.ndarray] = {}
    for part in np.unique(part_label_map):
        if part == BACKGROUND_LABEL:
            continue
        sel = part_label_map == part
        means[int(part)] = image.data[sel].mean(axis=0)
    return means


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, Callable[..., Backend]] = {}


def register_backend(name: str, factory: Callable[..., Backend]) -> None:
    _REGISTRY[name] = factory


def create_backend(name: str, **kwargs) -> Backend:
    if name not in _REGISTRY:
        known = ", ".join(sorted(_REGISTRY))
        raise KeyError(f"unknown backend {name!r}; registered backends: {known}")
    return _REGISTRY[name](**kwargs)


def registered_backends() -> list[str]:
    return sorted(_REGISTRY)


register_backend("toy", ToyBackend)
