import numpy as np
import pytest

from asgreg.pipeline import RegistrationConfig, RegistrationError, perturb_pose, register
from asgreg.verify import camera_delta

from conftest import random_rotation
from asgreg.types import CameraPose


def angle(R):
    return float(2 * np.arcsin(min(np.linalg.norm(R - np.eye(3)) / np.sqrt(8), 1.0)))


def test_perturb_pose_zero_sigma_is_identity(rng):
    p = CameraPose(random_rotation(rng), [1.0, 2.0, 3.0])
    for q in perturb_pose(p, 0.0, 0.0, count=3):
        np.testing.assert_allclose(q.rotation, p.rotation, atol=1e-12)
        np.testing.assert_array_equal(q.translation, p.translation)


def test_perturb_pose_statistics(rng):
    p = CameraPose(random_rotation(rng), [1.0, 2.0, 3.0])
    qs = perturb_pose(p, 0.5, 2.0, seed=3, count=3000)
    dt = np.array([q.translation - p.translation for q in qs])
    np.testing.assert_allclose(dt.std(axis=0), 0.5, rtol=0.06)
    ang = np.array([angle(q.rotation @ p.rotation.T) for q in qs])
    # |N(0, s)| has RMS s
    assert np.sqrt(np.mean(ang ** 2)) == pytest.approx(np.deg2rad(2.0), rel=0.06)
    again = perturb_pose(p, 0.5, 2.0, seed=3, count=2)
    np.testing.assert_array_equal(again[1].translation, qs[1].translation)
    with pytest.raises(ValueError):
        perturb_pose(p, -1.0, 1.0)


def test_config_validation(house):
    cfg = RegistrationConfig()
    assert cfg.intrinsics_mode == "estimate" and cfg.coarse_poses == 15
    assert cfg.translation_sigma(house.mesh) == pytest.approx(0.02 * house.mesh.diagonal)
    assert RegistrationConfig(sigma_translation=0.3).translation_sigma(house.mesh) == 0.3
    for bad in ({"coarse_poses": 0}, {"intrinsics_mode": "guess"}, {"sigma_rotation_deg": -1},
                {"verify_stride": 0}, {"sigma_translation": -0.1}):
        with pytest.raises(ValueError):
            RegistrationConfig(**bad)


def test_register_rejects_mismatched_image(house):
    q = house.queries[0]
    with pytest.raises(RegistrationError) as info:
        register(house.mesh, q.image[:-1], q.depth, house.intrinsics, q.pose)
    assert info.value.stage == "input"


def test_register_blank_image_is_rejected(house):
    K = house.intrinsics
    rep = register(house.mesh, np.zeros((K.height, K.width)), None, K, house.cameras[0],
                   RegistrationConfig(coarse_poses=2))
    assert not rep.success and rep.camera is None
    assert any("intensity" in w for w in rep.warnings)
    assert all(r.error for r in rep.records)


def test_register_improves_a_perturbed_pose(house):
    view = 3
    q, K = house.queries[view], house.intrinsics
    gt = house.cameras[view]
    start = perturb_pose(gt, 0.02 * house.mesh.diagonal, 1.0, seed=11, count=1)[0]
    rep = register(house.mesh, q.image, q.depth, K, start,
                   RegistrationConfig(intrinsics_mode="known", seed=1), ground_truth=(K, gt))
    assert rep.success
    assert rep.final_delta < 0.25 * rep.initial_delta
    assert rep.final_delta == pytest.approx(camera_delta(house.mesh, rep.camera, (K, gt)))
    assert rep.selected in rep.component and len(rep.component) >= 4
    assert len(rep.records) == 15
    assert {"query", "views", "verify"} <= set(rep.timings)
