import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bodyedit.prompts import (PromptSpec, adjective_for_bmi, bmi, build_prompt,
                              prompts_for_edit)


class TestBmi:
    def test_arithmetic(self):
        assert bmi(2.0, 60.0) == pytest.approx(15.0)
        assert bmi(1.6, 80.0) == pytest.approx(31.25)
        assert bmi(1.75, 70.0) == pytest.approx(22.857142857142858)

    def test_nonpositive_rejected(self):
        for h, w in ((0.0, 70.0), (1.7, 0.0), (-1.7, 70.0)):
            with pytest.raises(ValueError):
                bmi(h, w)


class TestAdjectiveBands:
    @pytest.mark.parametrize("value,expect", [
        (10.0, "skinny"), (15.0, "skinny"),
        (15.0001, "under weight"), (18.5, "under weight"),
        (18.5001, None), (22.0, None), (25.0, None),
        (25.0001, "overweight"), (30.0, "overweight"),
        (30.0001, "fat"), (31.25, "fat"), (100.0, "fat"),
    ])
    def test_every_band_and_boundary(self, value, expect):
        assert adjective_for_bmi(value) == expect

    def test_invalid_bmi_rejected(self):
        with pytest.raises(ValueError):
            adjective_for_bmi(0.0)
        with pytest.raises(ValueError):
            adjective_for_bmi(float("nan"))

    @given(st.floats(min_value=1e-6, max_value=1e6, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_total_over_positive_reals(self, value):
        # every positive BMI maps to exactly one band
        out = adjective_for_bmi(value)
        assert out in (None, "skinny", "under weight", "overweight", "fat")

    def test_band_order_monotone(self):
        order = {"skinny": 0, "under weight": 1, None: 2, "overweight": 3, "fat": 4}
        values = np.linspace(1.0, 60.0, 600)
        ranks = [order[adjective_for_bmi(float(v))] for v in values]
        assert ranks == sorted(ranks)


class TestBuildPrompt:
    def test_body_prompt_exact(self):
        spec = PromptSpec(token="sks", adjective="fat", orientation="left",
                          stage="body")
        assert build_prompt(spec) == "photo of a fat sks man facing left"

    def test_face_prompt_exact(self):
        spec = PromptSpec(token="sks", adjective="fat", orientation="left",
                          stage="face")
        assert build_prompt(spec) == "photo of a fat sks face facing left"

    def test_no_adjective_single_spaced(self):
        spec = PromptSpec(token="sks", adjective=None, orientation="left",
                          stage="body")
        assert build_prompt(spec) == "photo of a sks man facing left"

    def test_empty_token_rejected(self):
        with pytest.raises(ValueError):
            PromptSpec(token="", orientation="left")

    def test_empty_orientation_rejected(self):
        with pytest.raises(ValueError):
            PromptSpec(token="sks", orientation="")

    @given(st.sampled_from([None, "skinny", "under weight", "overweight", "fat"]),
           st.sampled_from(["left", "right", "front", "back", "up", "down"]),
           st.sampled_from(["body", "face"]))
    @settings(max_examples=60, deadline=None)
    def test_token_once_and_never_double_spaced(self, adjective, orientation, stage):
        prompt = build_prompt(PromptSpec(token="sks", adjective=adjective,
                                         orientation=orientation, stage=stage))
        assert prompt.count("sks") == 1
        assert "  " not in prompt


class TestPromptsForEdit:
    def test_shape_edit_includes_adjective(self):
        body, face = prompts_for_edit(1.6, 80.0, "left")
        assert body == "photo of a fat sks man facing left"
        assert face == "photo of a fat sks face facing left"

    def test_pose_only_edit_has_no_adjective(self):
        body, face = prompts_for_edit(1.6, 80.0, "front", shape_edited=False)
        assert body == "photo of a sks man facing front"
        assert face == "photo of a sks face facing front"

    def test_normal_bmi_has_no_adjective(self):
        body, _ = prompts_for_edit(1.75, 70.0, "right")
        assert body == "photo of a sks man facing right"
