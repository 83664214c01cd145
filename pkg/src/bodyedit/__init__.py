"""bodyedit: pose and body-shape editing of human images.

A textured parametric body is fit to (or supplied for) a reference person
image, re-posed / re-shaped, rendered, and then repaired by a masked,
iterative, weak-noise diffusion refinement (fullbody, then face), with the
face merged back through gradient-domain blending. Every neural component
sits behind an interface; the built-in deterministic toy backend makes the
whole pipeline runnable and testable without pretrained weights.
"""

from .backend import (Backend, Conditioning, LatentMap, NoiseSchedule,
                      NoiseTrajectory, TextEmbedding, ToyBackend,
                      create_backend, denoise_step, part_mean_colors,
                      q_sample_trajectory, register_backend,
                      registered_backends)
from .body import (BodyParams, BodyPart, TexturedMesh, ToyBodyModel,
                   edit_params, fit_to_silhouette, load_fit, load_mesh,
                   save_fit, save_mesh)
from .compositor import BlendProblem, paste_face, poisson_blend
from .core import (Camera, Heatmap, Image, Keypoints, Mask, load_heatmap,
                   load_image, load_mask, project_point, save_heatmap,
                   save_image, save_mask)
from .engine import (IterationRecord, RefinementConfig, learning_rate,
                     optimize_embedding, refine_once, run_block,
                     step1_fullbody, step2_face)
from .losses import (LossWeights, aw_loss, clip_part_loss, id_loss,
                     keypoint_loss, total_face, total_fullbody)
from .metrics import MetricReport, heatmap_l2, id_metric, psnr, ssim
from .pipeline import (PipelineConfig, RunManifest, Scene, ablate, edit,
                       evaluate, make_toy_reference, prepare_scene,
                       render_only, sweep_noise)
from .prompts import PromptSpec, adjective_for_bmi, bmi, build_prompt
from .texturing import (crop_part, face_border_mask, label_visibility,
                        project_texture, reflect_pad, render)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
