import numpy as np
import pytest

from asgreg.flow import Correspondences
from asgreg.pose import (
    BEHIND_PENALTY,
    DecompositionError,
    DegenerateConfigurationError,
    RansacParams,
    RefinementFailedError,
    decompose,
    dlt,
    epnp,
    ransac_refine,
    reprojection_errors,
    reprojection_rmse,
)
from asgreg.types import CameraIntrinsics, CameraPose, compose_projection

from conftest import pnp_instance


def rotation_angle(R1, R2):
    # chord form; arccos of the trace loses precision near zero
    return float(2 * np.arcsin(min(np.linalg.norm(R1 - R2) / np.sqrt(8), 1.0)))


def outlier_set(rng, n=100, inlier_fraction=0.7, noise=0.5):
    K, pose, x, X = pnp_instance(rng, n)
    x = x + rng.normal(0, noise, x.shape)
    k = int(round(inlier_fraction * n))
    bad = rng.permutation(n)[k:]
    x[bad] = rng.uniform([0, 0], [640, 480], (len(bad), 2))
    return K, pose, x, X, np.setdiff1d(np.arange(n), bad)


def test_dlt_exact_on_clean_data(rng):
    K, pose, x, X = pnp_instance(rng, 12)
    P = dlt((x, X))
    assert reprojection_rmse(P, (x, X)) < 1e-8
    # recovers the camera up to scale
    P0 = compose_projection(K, pose).matrix
    np.testing.assert_allclose(P.matrix, P0 / np.linalg.norm(P0[2, :3]), atol=1e-8)


def test_dlt_rejects_coplanar_and_short_input(rng):
    K, pose, x, X = pnp_instance(rng, 12, planar=True)
    with pytest.raises(DegenerateConfigurationError):
        dlt((x, X))
    with pytest.raises(ValueError):
        dlt((x[:5], X[:5]))
    with pytest.raises(DegenerateConfigurationError):
        dlt((x, np.repeat(X[:1], 12, axis=0)))


def test_decompose_recovers_intrinsics_and_pose(rng):
    K = CameraIntrinsics(520.0, 505.0, 300.0, 250.0, 640, 480, skew=1.5)
    _, pose, _, _ = pnp_instance(rng, 6, K=K)
    P = -2.5 * compose_projection(K, pose).matrix
    K2, pose2 = decompose(P, (640, 480))
    np.testing.assert_allclose(K2.matrix, K.matrix, atol=1e-8)
    np.testing.assert_allclose(pose2.rotation, pose.rotation, atol=1e-10)
    np.testing.assert_allclose(pose2.translation, pose.translation, atol=1e-10)
    K3, _ = decompose(P)
    assert K3.size == (601, 501)
    with pytest.raises(DecompositionError):
        decompose(np.zeros((3, 4)))


def test_epnp_exact_non_planar(rng):
    for _ in range(10):
        K, pose, x, X = pnp_instance(rng, 20)
        est = epnp((x, X), K)
        assert rotation_angle(est.rotation, pose.rotation) < 1e-8
        rel = np.linalg.norm(est.translation - pose.translation) / np.linalg.norm(pose.translation)
        assert rel < 1e-8


def test_epnp_planar_reprojection(rng):
    for _ in range(10):
        K, pose, x, X = pnp_instance(rng, 20, planar=True)
        est = epnp((x, X), K)
        assert reprojection_rmse(est, (x, X), K) < 1e-6


def test_epnp_minimal_and_degenerate(rng):
    K, pose, x, X = pnp_instance(rng, 6)
    est = epnp(Correspondences(x, X, 0), K)
    assert reprojection_rmse(est, (x, X), K) < 1e-6
    with pytest.raises(ValueError):
        epnp((x[:3], X[:3]), K)
    line = np.outer(np.arange(6.0), [1, 2, 3]) + [0, 0, 10]
    with pytest.raises(DegenerateConfigurationError):
        epnp((x, line), K)


def test_reprojection_errors_penalise_points_behind(rng):
    K, pose, x, X = pnp_instance(rng, 5)
    behind = pose.center - 3 * pose.rotation[2]
    err = reprojection_errors((K, pose), (np.vstack([x, [0, 0]]), np.vstack([X, behind])))
    np.testing.assert_allclose(err[:5], 0, atol=1e-9)
    assert err[5] == BEHIND_PENALTY
    P = compose_projection(K, pose)
    np.testing.assert_allclose(reprojection_errors(-3 * P.matrix, (x, X)), 0, atol=1e-9)
    with pytest.raises(ValueError):
        reprojection_errors(pose, (x, X))


def test_ransac_params():
    assert RansacParams().threshold((505, 275)) == pytest.approx(5.05)
    assert RansacParams(inlier_threshold=2.0).threshold(None) == 2.0
    with pytest.raises(ValueError):
        RansacParams().threshold(None)
    for bad in ({"min_consensus": 0}, {"max_iterations": 0}, {"sample_size": 3},
                {"inlier_threshold": -1.0}):
        with pytest.raises(ValueError):
            RansacParams(**bad)


@pytest.mark.parametrize("mode", ["dlt", "epnp"])
def test_ransac_with_outliers(rng, mode):
    K, pose, x, X, good = outlier_set(rng)
    h = ransac_refine((x, X), mode, RansacParams(seed=1), K=K)
    assert h.consensus >= 0.65 and h.iterations <= 500
    assert set(h.inliers) <= set(good) | set(np.flatnonzero(
        reprojection_errors((K, pose), (x, X)) < 6.4))
    assert h.rmse < 1.0
    assert rotation_angle(h.pose.rotation, pose.rotation) < 0.01
    assert h.intrinsics.size == K.size


@pytest.mark.parametrize("mode", ["dlt", "epnp"])
def test_ransac_three_pixel_threshold(rng, mode):
    K, pose, x, X, good = outlier_set(rng)
    h = ransac_refine((x, X), mode, RansacParams(inlier_threshold=3.0, seed=2), K=K)
    assert h.consensus >= 0.65
    e = reprojection_errors(h.projection, (x[good], X[good]))
    assert np.sqrt(np.mean(e ** 2)) < 1.0


def test_ransac_stops_at_first_sufficient_sample(rng):
    K, pose, x, X = pnp_instance(rng, 40)
    for mode in ("dlt", "epnp"):
        h = ransac_refine((x, X), mode, RansacParams(), K=K)
        assert h.iterations == 1 and h.consensus == 1.0


def test_ransac_cap_is_exact(rng):
    K, pose, x, X, _ = outlier_set(rng, inlier_fraction=0.5)
    h = ransac_refine((x, X), "epnp", RansacParams(max_iterations=37, seed=2), K=K)
    assert h.iterations == 37
    assert h.consensus < 0.65


def test_consensus_threshold_is_strict():
    from asgreg.pose import _score
    K = CameraIntrinsics(100.0, 100.0, 0.0, 0.0, 640, 480)
    X = np.array([[1.0, 1.0, 1.0], [2.0, -1.0, 2.0], [0.5, 0.25, 1.0]])
    x = 100 * X[:, :2] / X[:, 2:]
    x[0, 0] += 2.0  # error exactly 2
    x[1, 1] += 1.5
    inl, rmse = _score(CameraPose.identity(), x, X, K, 2.0)
    np.testing.assert_array_equal(inl, [1, 2])
    assert rmse == pytest.approx(np.sqrt(1.5 ** 2 / 2))


def test_ransac_refit_never_loses_consensus(rng):
    K, pose, x, X, _ = outlier_set(rng, noise=1.0)
    a = ransac_refine((x, X), "dlt", RansacParams(seed=5, refit=False), K=K)
    b = ransac_refine((x, X), "dlt", RansacParams(seed=5, refit=True), K=K)
    assert b.consensus >= a.consensus
    np.testing.assert_array_equal(a.sample_projection.matrix, b.sample_projection.matrix)


def test_ransac_seeded_and_errors(rng):
    K, pose, x, X, _ = outlier_set(rng)
    a = ransac_refine((x, X), "dlt", RansacParams(seed=9), K=K)
    b = ransac_refine((x, X), "dlt", RansacParams(seed=9), K=K)
    np.testing.assert_array_equal(a.projection.matrix, b.projection.matrix)
    with pytest.raises(ValueError):
        ransac_refine((x[:5], X[:5]), "dlt", K=K)
    with pytest.raises(ValueError):
        ransac_refine((x, X), "epnp")
    with pytest.raises(ValueError):
        ransac_refine((x, X), "bogus", K=K)
    line = np.outer(np.arange(len(x), dtype=float), [1, 2, 3]) + [0, 0, 10]
    with pytest.raises(RefinementFailedError):
        ransac_refine((x, line), "dlt", RansacParams(max_iterations=5), K=K)
