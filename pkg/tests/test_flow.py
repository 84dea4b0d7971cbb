import numpy as np
import pytest

from asgreg.flow import (
    Correspondence2D3D,
    Correspondences,
    DenseSiftField,
    FlowField,
    FlowParams,
    consistent_pairs,
    dense_sift,
    flow_energy,
    lift_to_3d,
    sift_flow,
    textured_mask,
)
from asgreg.raster import render
from asgreg.types import CameraIntrinsics, CameraPose, GradientImage, project_points

from conftest import quad


def noise_pair(shift, H=80, W=120, pad=50, seed=0):
    """Smoothed noise and a copy displaced by ``shift`` = (dx, dy)."""
    from scipy import ndimage
    rng = np.random.default_rng(seed)
    big = ndimage.gaussian_filter(rng.random((H + 2 * pad, W + 2 * pad)), 1.5)
    big = (big - big.min()) * 50
    dx, dy = shift
    src = big[pad:pad + H, pad:pad + W]
    # target[p + shift] = source[p]
    tgt = big[pad - dy:pad - dy + H, pad - dx:pad - dx + W]
    return GradientImage(src), GradientImage(tgt)


def test_params_reach_and_validation():
    assert FlowParams().reach == 6 * 8 + 2 * (1 + 2 + 4)
    assert FlowParams().search_radius == 48
    assert FlowParams(levels=1, coarse_radius=3).reach == 3
    with pytest.raises(ValueError):
        FlowParams(levels=0)
    with pytest.raises(ValueError):
        FlowParams(smoothness=-1)


def test_descriptors_are_normalised_and_clamped():
    g, _ = noise_pair((0, 0))
    f = dense_sift(g)
    d = f.descriptors
    assert d.shape == (80, 120, 128) and d.dtype == np.float32
    norms = np.linalg.norm(d, axis=2)
    np.testing.assert_allclose(norms[norms > 0], 1.0, atol=1e-5)
    assert d.min() >= 0


def test_descriptors_follow_translation():
    a, b = noise_pair((5, 3))
    fa, fb = dense_sift(a), dense_sift(b)
    # interior pixels whose windows stay inside both rasters
    inner = (slice(20, 50), slice(20, 90))
    np.testing.assert_allclose(fa.descriptors[inner],
                               fb.descriptors[23:53, 25:95], atol=1e-5)


def test_invalid_pixels_have_zero_descriptors():
    g, _ = noise_pair((0, 0))
    valid = np.ones(g.magnitude.shape, bool)
    valid[10:20, 10:20] = False
    f = dense_sift(GradientImage(g.magnitude, valid))
    assert np.all(f.descriptors[10:20, 10:20] == 0)


def test_pyramid_is_cached_and_halves():
    g, _ = noise_pair((0, 0), H=81, W=121)
    f = dense_sift(g)
    pyr = f.pyramid(3)
    assert [p.shape[:2] for p in pyr] == [(81, 121), (41, 61), (21, 31)]
    assert f.pyramid(2)[1] is pyr[1]
    np.testing.assert_allclose(pyr[1][0, 0], f.descriptors[:2, :2].mean(axis=(0, 1)), atol=1e-6)


@pytest.mark.parametrize("shift", [(0, 0), (3, -2), (-14, 9), (25, 6)])
def test_sift_flow_recovers_constant_shift(shift):
    a, b = noise_pair(shift, seed=7)
    fa, fb = dense_sift(a), dense_sift(b)
    mask = np.zeros(a.magnitude.shape, bool)
    mask[16:-16, 16:-16] = True
    flow = sift_flow(fa, fb, mask)
    H, W = mask.shape
    ys, xs = np.mgrid[0:H, 0:W]
    tx, ty = xs + shift[0], ys + shift[1]
    interior = mask & (tx >= 16) & (tx < W - 16) & (ty >= 16) & (ty < H - 16)
    ok = (flow.u == shift[0]) & (flow.v == shift[1]) & interior
    assert ok.sum() >= 0.95 * interior.sum()
    assert not flow.valid[~mask].any()


def test_true_flow_has_lower_energy_than_zero_flow():
    a, b = noise_pair((4, 2), seed=3)
    fa, fb = dense_sift(a), dense_sift(b)
    mask = np.zeros(a.magnitude.shape, bool)
    mask[20:-20, 20:-20] = True
    true = FlowField.constant(mask.shape, 4, 2, mask)
    zero = FlowField.zeros(mask.shape, mask)
    assert flow_energy(fa, fb, mask, true) < flow_energy(fa, fb, mask, zero)
    off = FlowField.constant(mask.shape, 500, 0, mask)
    assert flow_energy(fa, fb, mask, off) == np.inf


def test_flow_with_empty_mask_is_invalid():
    a, b = noise_pair((0, 0))
    f = sift_flow(dense_sift(a), dense_sift(b), np.zeros(a.magnitude.shape, bool))
    assert not f.valid.any()
    with pytest.raises(ValueError):
        sift_flow(dense_sift(a), dense_sift(b), np.zeros((3, 3), bool))


def test_textured_mask_threshold():
    m = np.zeros((10, 10))
    m[2, :] = 10.0
    m[5, :] = 0.5
    g = GradientImage(m)
    np.testing.assert_array_equal(textured_mask(g, 0.1), m > 1.0)
    assert not textured_mask(GradientImage(np.zeros((4, 4)))).any()
    with pytest.raises(ValueError):
        textured_mask(g, 1.5)


def test_consistent_pairs_keep_exact_inverses():
    shape = (20, 30)
    fwd = FlowField.constant(shape, 3, 4)
    bwd = FlowField.constant(shape, -3, -4)
    # flows pointing outside the raster are not valid
    fwd = FlowField(fwd.u, fwd.v, np.pad(np.ones((16, 27), bool), ((0, 4), (0, 3))))
    p, q = consistent_pairs(fwd, bwd, tol=0.0)
    assert len(p) == 16 * 27
    np.testing.assert_array_equal(q - p, np.broadcast_to([3, 4], p.shape))
    bad = FlowField.constant(shape, -3, -2)
    assert len(consistent_pairs(fwd, bad, tol=1.0)[0]) == 0
    assert len(consistent_pairs(fwd, bad, tol=2.0)[0]) == 16 * 27


def test_consistent_pairs_symmetric_at_zero_tolerance():
    rng = np.random.default_rng(0)
    shape = (15, 15)
    u = rng.integers(-2, 3, shape)
    v = rng.integers(-2, 3, shape)
    ys, xs = np.mgrid[0:15, 0:15]
    ok = (xs + u >= 0) & (xs + u < 15) & (ys + v >= 0) & (ys + v < 15)
    fwd = FlowField(np.where(ok, u, 0), np.where(ok, v, 0), ok)
    bu = rng.integers(-2, 3, shape)
    bv = rng.integers(-2, 3, shape)
    okb = (xs + bu >= 0) & (xs + bu < 15) & (ys + bv >= 0) & (ys + bv < 15)
    bwd = FlowField(np.where(okb, bu, 0), np.where(okb, bv, 0), okb)
    p, q = consistent_pairs(fwd, bwd, 0.0)
    q2, p2 = consistent_pairs(bwd, fwd, 0.0)
    assert sorted(map(tuple, np.hstack([p, q]))) == sorted(map(tuple, np.hstack([p2, q2])))


def test_lift_to_3d_reprojects_to_render_pixel():
    K = CameraIntrinsics(60, 60, 31.5, 23.5, 64, 48)
    pose = CameraPose.look_at([1.0, -2.0, -8.0], [0, 0, 5.0], up=(0, -1, 0))
    out = render(quad(z=5.0), K, pose)
    q = np.array([[31, 23], [10, 40], [60, 2]])
    p = q + 1
    c = lift_to_3d((p, q), out, K, pose, view=3)
    np.testing.assert_allclose(c.points[:, 2], 5.0, atol=1e-9)
    px, _ = project_points(K.matrix @ pose.matrix, c.points)
    np.testing.assert_allclose(px, q, atol=1e-9)
    np.testing.assert_array_equal(c.pixels, p)
    assert set(c.views) == {3}


def test_correspondence_containers():
    items = [Correspondence2D3D((1.0, 2.0), (3.0, 4.0, 5.0), 0),
             Correspondence2D3D((6.0, 7.0), (8.0, 9.0, 10.0), 1)]
    c = Correspondences.from_list(items)
    assert len(c) == 2 and c[1] == items[1] and list(c) == items
    both = Correspondences.concatenate([c, c[:1]])
    assert len(both) == 3
    assert len(Correspondences.concatenate([])) == 0
    with pytest.raises(ValueError):
        Correspondences(np.zeros((2, 2)), np.zeros((3, 3)), 0)
    with pytest.raises(ValueError):
        Correspondences(np.full((1, 2), np.nan), np.zeros((1, 3)), 0)
