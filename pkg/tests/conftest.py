import numpy as np
import pytest

from asgreg.scenes import make_synthetic_scene
from asgreg.types import CameraIntrinsics, CameraPose, TriangleMesh


def random_rotation(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def unit_cube(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TriangleMesh:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    v = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], dtype=float)
    v = lo + v * (hi - lo)
    # outward winding
    f = [[0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4],
         [2, 6, 3], [3, 6, 7], [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5]]
    return TriangleMesh(v, np.array(f))


def quad(z=5.0, half=10.0, facing_camera=True) -> TriangleMesh:
    """Square in the plane Z = z; winding normal -Z (toward a camera at the origin)."""
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    f = np.array([[0, 2, 1], [0, 3, 2]]) if facing_camera else np.array([[0, 1, 2], [0, 2, 3]])
    return TriangleMesh(v, f)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_K():
    return CameraIntrinsics(60.0, 60.0, 31.5, 23.5, 64, 48)


@pytest.fixture
def identity_pose():
    return CameraPose.identity()


@pytest.fixture(scope="session")
def house():
    return make_synthetic_scene("house", 0)


def pnp_instance(rng, n=30, planar=False, K=None):
    """Random camera and ``n`` world points in front of it with exact pixels.

    Returns ``(K, pose, pixels, points)``; planar instances put the points on
    a random plane.
    """
    K = K or CameraIntrinsics(500.0, 480.0, 320.0, 240.0, 640, 480)
    R = random_rotation(rng)
    Xc = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-1.5, 1.5, n), rng.uniform(4, 8, n)])
    if planar:
        normal = rng.standard_normal(3)
        normal[2] = abs(normal[2]) + 1.0
        normal /= np.linalg.norm(normal)
        # slide each point along the ray onto the plane normal.X = 6 normal_z
        Xc = Xc * (6.0 * normal[2] / (Xc @ normal))[:, None]
    t = rng.uniform(-1, 1, 3)
    pose = CameraPose(R, t)
    X = (Xc - t) @ R
    x = Xc[:, :2] / Xc[:, 2:] * [K.fx, K.fy] + [K.cx, K.cy]
    return K, pose, x, X


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
