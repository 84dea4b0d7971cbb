"""Procedural low-poly building scenes with ground-truth cameras."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asg import AsgConfig, query_gradient
from .raster import render
from .types import CameraIntrinsics, CameraPose, DepthMap, GradientImage, TriangleMesh

__all__ = ["SyntheticScene", "QueryView", "make_synthetic_scene", "SCENES", "default_intrinsics"]

SCENES = ("house", "blocks", "courtyard")
CAMERA_HEIGHTS = (2.0, 8.0, 15.0)
LIGHT = np.array([0.4, 0.3, -0.866])


def default_intrinsics(width: int = 505, height: int = 275) -> CameraIntrinsics:
    f = 0.75 * width
    return CameraIntrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


@dataclass(frozen=True)
class QueryView:
    pose: CameraPose
    image: np.ndarray
    depth: DepthMap
    gradient: GradientImage


@dataclass(frozen=True)
class SyntheticScene:
    name: str
    mesh: TriangleMesh
    intrinsics: CameraIntrinsics
    cameras: tuple[CameraPose, ...]
    queries: tuple[QueryView, ...]


class _Builder:
    def __init__(self):
        self.vertices: list[np.ndarray] = []
        self.faces: list[np.ndarray] = []
        self._n = 0

    def convex(self, verts, faces):
        """Add a closed convex part, fixing each face to wind outward."""
        verts = np.asarray(verts, dtype=float)
        faces = np.array(faces, dtype=np.int64)
        centroid = verts.mean(axis=0)
        tri = verts[faces]
        nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        out = np.einsum("ij,ij->i", nrm, tri.mean(axis=1) - centroid)
        faces[out < 0] = faces[out < 0][:, ::-1]
        self.vertices.append(verts)
        self.faces.append(faces + self._n)
        self._n += len(verts)

    def box(self, lo, hi):
        (x0, y0, z0), (x1, y1, z1) = lo, hi
        v = [(x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0),
             (x0, y0, z1), (x1, y0, z1), (x1, y1, z1), (x0, y1, z1)]
        quads = [(0, 1, 2, 3), (4, 5, 6, 7), (0, 1, 5, 4),
                 (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7)]
        self.convex(v, [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))])

    def gable(self, lo, hi, ridge_height, along_x=True):
        """Triangular prism roof sitting on the rectangle lo..hi at z = lo[2]."""
        (x0, y0, z0), (x1, y1, _) = lo, hi
        zr = z0 + ridge_height
        if along_x:
            ym = 0.5 * (y0 + y1)
            v = [(x0, y0, z0), (x0, y1, z0), (x0, ym, zr),
                 (x1, y0, z0), (x1, y1, z0), (x1, ym, zr)]
        else:
            xm = 0.5 * (x0 + x1)
            v = [(x0, y0, z0), (x1, y0, z0), (xm, y0, zr),
                 (x0, y1, z0), (x1, y1, z0), (xm, y1, zr)]
        f = [(0, 1, 2), (3, 4, 5), (0, 1, 4), (0, 4, 3),
             (1, 2, 5), (1, 5, 4), (2, 0, 3), (2, 3, 5)]
        self.convex(v, f)

    def hip(self, lo, hi, height):
        """Pyramid roof over a rectangle."""
        (x0, y0, z0), (x1, y1, _) = lo, hi
        v = [(x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0),
             (0.5 * (x0 + x1), 0.5 * (y0 + y1), z0 + height)]
        self.convex(v, [(0, 1, 2), (0, 2, 3), (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)])

    def mesh(self) -> TriangleMesh:
        return TriangleMesh(np.vstack(self.vertices), np.vstack(self.faces))


def _ground(b: _Builder, half: float):
    # Split into tiles so no single triangle is huge relative to the view.
    edges = np.linspace(-half, half, 4)
    for i in range(3):
        for j in range(3):
            b.box((edges[i], edges[j], -0.5), (edges[i + 1], edges[j + 1], 0.0))


def _house(rng) -> TriangleMesh:
    j = lambda s: s * (1.0 + 0.08 * rng.uniform(-1, 1))
    b = _Builder()
    _ground(b, 15.0)
    lx, ly, h = j(5.0), j(3.5), j(4.5)
    b.box((-lx, -ly, 0.0), (lx, ly, h))
    b.gable((-lx - 0.4, -ly - 0.4, h), (lx + 0.4, ly + 0.4, h), j(3.0))
    ax, ah = j(2.6), j(3.0)
    b.box((lx, -ly + 0.5, 0.0), (lx + ax, ly - 1.2, ah))
    b.hip((lx - 0.01, -ly + 0.3, ah), (lx + ax + 0.3, ly - 1.0, ah), j(1.4))
    b.box((-lx * 0.5, -ly * 0.2, h), (-lx * 0.5 + 0.8, -ly * 0.2 + 0.8, h + j(3.6)))
    b.box((-lx - 2.2, -ly - 2.0, 0.0), (-lx - 0.6, -ly - 0.2, j(1.2)))
    b.box((-1.0, -ly - 1.6, 0.0), (1.0, -ly, j(0.35)))
    b.box((lx + 1.0, ly + 1.2, 0.0), (lx + 1.6, ly + 4.0, j(1.8)))
    return b.mesh()


def _blocks(rng) -> TriangleMesh:
    b = _Builder()
    _ground(b, 15.0)
    spots = [(-5.0, -3.0), (-1.0, 1.5), (3.5, -2.0), (4.0, 3.5), (-4.5, 4.0)]
    for cx, cy in spots:
        sx, sy = rng.uniform(1.0, 2.2, size=2)
        h = rng.uniform(1.5, 6.0)
        b.box((cx - sx, cy - sy, 0.0), (cx + sx, cy + sy, h))
        if rng.random() < 0.6:
            b.gable((cx - sx, cy - sy, h), (cx + sx, cy + sy, h), rng.uniform(0.8, 2.0),
                    along_x=bool(rng.random() < 0.5))
    return b.mesh()


def _courtyard(rng) -> TriangleMesh:
    b = _Builder()
    _ground(b, 15.0)
    w, d, t = 6.0, 5.0, 1.8
    h = 4.0 + rng.uniform(-0.5, 0.5)
    b.box((-w, -d, 0.0), (w, -d + t, h))
    b.box((-w, -d + t, 0.0), (-w + t, d, h))
    b.box((w - t, -d + t, 0.0), (w, d, h + 1.0))
    b.gable((-w, -d, h), (w, -d + t, h), 1.5)
    b.box((-1.0, 0.5, 0.0), (1.0, 2.5, 0.8))
    b.hip((w - t, -d + t, h + 1.0), (w, d, h + 1.0), 1.2)
    return b.mesh()


_BUILDERS = {"house": _house, "blocks": _blocks, "courtyard": _courtyard}


def _camera_ring(mesh: TriangleMesh, per_height: int = 8, radius: float = 19.0):
    target = np.array([0.0, 0.0, 3.0])
    poses = []
    for hgt in CAMERA_HEIGHTS:
        for k in range(per_height):
            a = 2 * np.pi * (k + 0.5) / per_height
            eye = np.array([radius * np.cos(a), radius * np.sin(a), hgt])
            poses.append(CameraPose.look_at(eye, target))
    return poses


def make_synthetic_scene(name: str = "house", seed: int = 0, width: int = 505,
                         height: int = 275, depth_noise: float = 0.0,
                         per_height: int = 8, cfg: AsgConfig = AsgConfig()) -> SyntheticScene:
    """Build a mesh, a ring of cameras at three heights and their query rasters.

    Each query carries a shaded intensity image, the rendered depth (with
    optional multiplicative Gaussian noise of relative sigma ``depth_noise``)
    and the ASG query raster computed from that depth.
    """
    if name not in _BUILDERS:
        raise ValueError(f"unknown scene {name!r}; choose from {SCENES}")
    rng = np.random.default_rng(seed)
    mesh = _BUILDERS[name](rng)
    K = default_intrinsics(width, height)
    cameras = _camera_ring(mesh, per_height)
    noise_rng = np.random.default_rng(seed + 10_000)
    light = LIGHT / np.linalg.norm(LIGHT)
    queries = []
    for pose in cameras:
        out = render(mesh, K, pose)
        shade = np.maximum(0.0, -(out.normal_map.normals @ (pose.rotation @ light)))
        image = np.where(out.valid, 40.0 + 200.0 * shade, 0.0)
        d = out.depth_map.depth
        if depth_noise > 0:
            d = d * (1.0 + depth_noise * noise_rng.standard_normal(d.shape))
        depth = DepthMap(d, out.valid)
        queries.append(QueryView(pose, image, depth, query_gradient(image, depth, K, cfg)))
    return SyntheticScene(name, mesh, K, tuple(cameras), tuple(queries))
