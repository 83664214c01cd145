"""BMI-driven prompt assembly for the two refinement stages."""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_TOKEN = "sks"
ORIENTATIONS = ("left", "right", "front", "back", "up", "down")

# body-shape adjective bands by BMI; the normal band has no adjective
_BMI_BANDS = (
    (15.0, "skinny"),
    (18.5, "under weight"),
    (25.0, None),
    (30.0, "overweight"),
)
_BMI_ABOVE = "fat"


@dataclass(frozen=True)
class PromptSpec:
    token: str = DEFAULT_TOKEN
    adjective: str | None = None
    orientation: str = "front"
    stage: str = "body"  # "body" | "face"
    noun: str = "man"    # body-stage noun; the face stage always uses "face"

    def __post_init__(self):
        if not self.token:
            raise ValueError("token must be non-empty")
        if not self.orientation:
            raise ValueError("orientation must be non-empty")
        if self.stage not in ("body", "face"):
            raise ValueError(f"stage must be 'body' or 'face', got {self.stage!r}")


def bmi(height_m: float, weight_kg: float) -> float:
    if height_m <= 0 or weight_kg <= 0:
        raise ValueError("height and weight must be positive")
    return weight_kg / (height_m * height_m)


def adjective_for_bmi(b: float) -> str | None:
    if not b > 0:
        raise ValueError("BMI must be positive and finite")
    for upper, adjective in _BMI_BANDS:
        if b <= upper:
            return adjective
    return _BMI_ABOVE


def build_prompt(spec: PromptSpec) -> str:
    """'photo of a {adjective }{token} {man|face} facing {orientation}',
    with the adjective slot omitted entirely when there is none."""
    noun = "face" if spec.stage == "face" else spec.noun
    adjective = f"{spec.adjective} " if spec.adjective else ""
    return f"photo of a {adjective}{spec.token} {noun} facing {spec.orientation}"


def prompts_for_edit(height_m: float, weight_kg: float, orientation: str,
                     token: str = DEFAULT_TOKEN, shape_edited: bool = True,
                     noun: str = "man") -> tuple[str, str]:
    """Body and face prompts for an edit. The adjective appears only when
    the body shape is being edited."""
    adjective = adjective_for_bmi(bmi(height_m, weight_kg)) if shape_edited else None
    body = build_prompt(PromptSpec(token=token, adjective=adjective,
                                   orientation=orientation, stage="body", noun=noun))
    face = build_prompt(PromptSpec(token=token, adjective=adjective,
                                   orientation=orientation, stage="face", noun=noun))
    return body, face
