import numpy as np
import pytest

from asgreg import io
from asgreg.flow import Correspondences
from asgreg.pipeline import RegistrationConfig
from asgreg.types import CameraIntrinsics, CameraPose

from conftest import random_rotation, unit_cube


@pytest.mark.parametrize("ext", [".ply", ".obj"])
def test_mesh_round_trip(tmp_path, ext):
    m = unit_cube(lo=(0.1, -2.5, 1e-3), hi=(1.0 / 3, 7.0, 2.0))
    path = tmp_path / f"m{ext}"
    (io.write_ply if ext == ".ply" else io.write_obj)(path, m)
    back = io.read_mesh(path)
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.faces, m.faces)


def test_mesh_readers_reject_bad_input(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(io.FormatError, match="triangles"):
        io.read_mesh(p)
    p = tmp_path / "q.ply"
    p.write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
    with pytest.raises(io.FormatError):
        io.read_mesh(p)
    p = tmp_path / "q.stl"
    p.write_text("solid")
    with pytest.raises(io.FormatError):
        io.read_mesh(p)


def test_obj_negative_indices_and_comments(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3//1 -2//1 -1//1\n")
    m = io.read_mesh(p)
    np.testing.assert_array_equal(m.faces, [[0, 1, 2]])


@pytest.mark.parametrize("bits", [8, 16])
def test_pgm_round_trip(tmp_path, bits):
    img = np.random.default_rng(0).integers(0, 2 ** bits, (7, 9))
    io.write_pgm(tmp_path / "a.pgm", img, bits)
    np.testing.assert_array_equal(io.read_pgm(tmp_path / "a.pgm"), img)


def test_ascii_pgm_with_comment(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_text("P2\n# hi\n3 2\n255\n0 1 2\n3 4 255\n")
    np.testing.assert_array_equal(io.read_pgm(p), [[0, 1, 2], [3, 4, 255]])


def test_byte_image_scaling():
    b = io.to_byte_image(np.array([[1.0, 3.0], [2.0, 100.0]]),
                         np.array([[True, True], [True, False]]))
    # magnitudes scale from zero to the largest valid value
    np.testing.assert_array_equal(b, [[85, 255], [170, 0]])


def test_raster_round_trip(tmp_path):
    v = np.random.default_rng(1).random((4, 5, 3))
    valid = np.ones((4, 5), bool)
    valid[1, 2] = False
    io.write_raster(tmp_path / "r.txt", v, valid)
    back = io.read_raster(tmp_path / "r.txt")
    assert np.isnan(back[1, 2]).all()
    np.testing.assert_array_equal(back[valid], v[valid])
    (tmp_path / "bad.txt").write_text("2 2\n1 2 3\n")
    with pytest.raises(io.FormatError):
        io.read_raster(tmp_path / "bad.txt")


def test_camera_round_trip(tmp_path, rng):
    pose = CameraPose(random_rotation(rng), rng.standard_normal(3))
    K = CameraIntrinsics(500.5, 499.0, 250.25, 137.0, 505, 275, skew=0.1)
    io.write_camera(tmp_path / "c.txt", pose, K)
    p2, K2 = io.read_camera(tmp_path / "c.txt")
    np.testing.assert_allclose(p2.rotation, pose.rotation, atol=1e-15)
    np.testing.assert_array_equal(p2.translation, pose.translation)
    assert K2 == K
    (tmp_path / "k.txt").write_text("fx: 10\nfy: 10\ncx: 4\ncy: 4\nwidth: 9\nheight: 9\n")
    assert io.read_camera(tmp_path / "k.txt") == (None, CameraIntrinsics(10, 10, 4, 4, 9, 9))
    (tmp_path / "b.txt").write_text("rotation = 1 0 0 0 1 0 0 0 1\n")
    with pytest.raises(io.FormatError):
        io.read_camera(tmp_path / "b.txt")


def test_read_config(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("pipeline.coarse_poses = 5\npipeline.intrinsics_mode = known\n"
                 "flow.levels = 3\nransac.max_iterations = 100\nverify.stride = 3\n"
                 "asg.mc_samples = 10  # comment\n")
    cfg = io.read_config(p)
    assert cfg.coarse_poses == 5 and cfg.intrinsics_mode == "known"
    assert cfg.flow.levels == 3 and cfg.ransac.max_iterations == 100
    assert cfg.verify_stride == 3 and cfg.asg.mc_samples == 10
    assert cfg.seed == RegistrationConfig().seed
    p.write_text("flow.nonsense = 1\n")
    with pytest.raises(io.FormatError):
        io.read_config(p)
    p.write_text("colour = red\n")
    with pytest.raises(io.FormatError):
        io.read_config(p)


def test_csv_writers():
    c = Correspondences([[1.5, 2.0]], [[3.0, 4.0, 5.0]], 7)
    assert io.correspondences_csv(c) == "x,y,X,Y,Z,view\n1.5,2.0,3.0,4.0,5.0,7\n"
    assert io.edges_csv([(0, 3, 1.25)]) == "i,j,delta\n0,3,1.25\n"


def test_edge_overlay_marks_outline():
    from asgreg.scenes import make_synthetic_scene
    s = make_synthetic_scene("blocks", 0, width=80, height=60, per_height=1)
    q = s.queries[0]
    ov = io.edge_overlay(q.image, s.mesh, s.intrinsics, s.cameras[0])
    assert ov.dtype == np.uint8 and ov.shape == (60, 80)
    v = q.depth.valid
    border = v[:, 1:] != v[:, :-1]
    assert np.all(ov[:, :-1][border] == 255)
