import numpy as np
import pytest

from asgreg.raster import render
from asgreg.scenes import SCENES, default_intrinsics, make_synthetic_scene


def test_default_intrinsics():
    K = default_intrinsics()
    assert K.size == (505, 275) and K.cx == 252.0 and K.cy == 137.0


@pytest.mark.parametrize("name", SCENES)
def test_scenes_are_deterministic_and_visible(name):
    a = make_synthetic_scene(name, 3, width=160, height=90, per_height=2)
    b = make_synthetic_scene(name, 3, width=160, height=90, per_height=2)
    np.testing.assert_array_equal(a.mesh.vertices, b.mesh.vertices)
    assert len(a.cameras) == 6
    for q in a.queries:
        cover = q.depth.valid.mean()
        assert 0.05 < cover < 0.95
        assert q.image.shape == (90, 160)
        assert np.all(q.image[~q.depth.valid] == 0)


def test_queries_match_renders(house):
    q = house.queries[5]
    out = render(house.mesh, house.intrinsics, house.cameras[5])
    np.testing.assert_array_equal(q.depth.valid, out.valid)
    # ASG mask concentrates on creases: a small share of valid pixels
    strong = q.gradient.magnitude > 0.1 * np.percentile(q.gradient.magnitude[q.gradient.valid], 99)
    share = strong.sum() / q.depth.valid.sum()
    assert 0.02 < share < 0.6


def test_depth_noise_and_unknown_name():
    clean = make_synthetic_scene("blocks", 0, width=80, height=60, per_height=1)
    noisy = make_synthetic_scene("blocks", 0, width=80, height=60, per_height=1, depth_noise=0.01)
    v = clean.queries[0].depth.valid
    assert not np.allclose(clean.queries[0].depth.depth[v], noisy.queries[0].depth.depth[v])
    with pytest.raises(ValueError):
        make_synthetic_scene("castle")
