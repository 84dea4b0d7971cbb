import numpy as np
import pytest

from asgreg import io
from asgreg.cli import EXIT_ERROR, EXIT_OK, EXIT_REJECTED, main


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    assert main(["make-scene", "--name", "house", "--out-dir", str(out)]) == EXIT_OK
    return out


def test_make_scene_writes_views(scene_dir):
    assert (scene_dir / "mesh.ply").exists()
    assert len(list(scene_dir.glob("view*_camera.txt"))) == 24
    img = io.read_pgm(scene_dir / "view00_image.pgm")
    depth = io.read_raster(scene_dir / "view00_depth.txt")
    assert img.shape == depth.shape == (275, 505)


def test_render_asg(scene_dir, tmp_path):
    cam = str(scene_dir / "view03_camera.txt")
    for out in ("asg.pgm", "asg.txt"):
        assert main(["render-asg", "--mesh", str(scene_dir / "mesh.ply"), "--pose", cam,
                     "--intrinsics", cam, "--out", str(tmp_path / out)]) == EXIT_OK
    g = io.read_raster(tmp_path / "asg.txt")
    assert np.nanmax(g) > 0


def test_register_exit_codes(scene_dir, tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("pipeline.coarse_poses = 5\npipeline.intrinsics_mode = known\n")
    cam = str(scene_dir / "view03_camera.txt")
    args = ["register", "--mesh", str(scene_dir / "mesh.ply"),
            "--image", str(scene_dir / "view03_image.pgm"),
            "--depth", str(scene_dir / "view03_depth.txt"),
            "--intrinsics", cam, "--initial-pose", cam, "--config", str(cfg)]
    rep = tmp_path / "rep.txt"
    code = main(args + ["--out-report", str(rep), "--out-overlay", str(tmp_path / "o.pgm")])
    assert code == EXIT_OK
    text = rep.read_text()
    assert "success = true" in text and "[final_camera]" in text and "[edges]" in text
    assert (tmp_path / "o.pgm").exists()
    # a single coarse pose can never form a large enough component
    cfg.write_text("pipeline.coarse_poses = 1\npipeline.intrinsics_mode = known\n")
    assert main(args + ["--out-report", str(rep)]) == EXIT_REJECTED
    assert "success = false" in rep.read_text()


def test_errors_exit_one(tmp_path, capsys):
    assert main(["register", "--mesh", str(tmp_path / "none.ply"), "--image", "x.pgm",
                 "--intrinsics", "k", "--initial-pose", "p"]) == EXIT_ERROR
    assert "error" in capsys.readouterr().err
    assert main(["frobnicate"]) == EXIT_ERROR
    assert main(["--help"]) == EXIT_OK


def test_evaluate_icp(capsys):
    assert main(["evaluate", "--scene", "house", "--buckets", "30", "--trials", "1",
                 "--mode", "icp"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("target,cases,successes")
    assert out[1].startswith("30,1,")
