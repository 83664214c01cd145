import numpy as np
import pytest

from bodyedit.backend import ToyBackend
from bodyedit.body import ToyBodyModel
from bodyedit.core import Camera, Image, Mask


@pytest.fixture(scope="session")
def model():
    return ToyBodyModel()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    """Rest-pose toy body projected and rendered at 96x96, shared by the
    geometry tests (visibility labeling is the slow part)."""
    from bodyedit.pipeline import make_toy_reference
    from bodyedit.texturing import label_visibility, project_texture, render

    model = ToyBodyModel()
    params = model.rest_params()
    camera = Camera.identity(96, 96)
    reference = make_toy_reference(96)
    mesh = model.mesh(params)
    mesh = project_texture(mesh, camera, reference)
    mesh = label_visibility(mesh, camera)
    rendered, label_map, invisible = render(mesh, camera, reference, 96)
    return {
        "model": model, "params": params, "camera": camera,
        "reference": reference, "mesh": mesh, "rendered": rendered,
        "label_map": label_map, "invisible": invisible,
    }


def random_image(rng, h=32, w=32, c=3):
    return Image(rng.random((h, w, c)))


def random_mask(rng, h=32, w=32, p=0.5):
    return Mask((rng.random((h, w)) < p).astype(np.uint8))


@pytest.fixture()
def toy_backend():
    return ToyBackend(total_steps=50)
