"""Geometric and raster data types shared by every stage of the registration.

Conventions used throughout the package:

* Extrinsics map world to camera: ``X_cam = R @ X_world + t``.
* Camera frame: x right, y down, z forward along the optical axis.
* Pixel centers sit at integer coordinates, origin top-left, x right, y down.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

__all__ = [
    "TriangleMesh",
    "CameraIntrinsics",
    "CameraPose",
    "ProjectionMatrix",
    "NormalMap",
    "DepthMap",
    "GradientImage",
    "DerivativeKernel",
    "LightDirection",
    "PointAtInfinityError",
    "compose_projection",
    "project_point",
    "project_points",
]


class PointAtInfinityError(ValueError):
    """A point lies on the principal plane of the camera."""


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices)
        f = _frozen(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (N, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError(f"faces must be (M, 3) triangles, got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices must be finite")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        areas = self.face_areas()
        if np.any(areas <= 1e-12):
            bad = int(np.flatnonzero(areas <= 1e-12)[0])
            raise ValueError(f"degenerate face {bad} (area {areas[bad]:.3g})")

    def _cross(self) -> np.ndarray:
        tri = self.vertices[self.faces]
        return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals following the right-hand rule over the face winding."""
        c = self._cross()
        return c / np.linalg.norm(c, axis=1, keepdims=True)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def diagonal(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def sample_surface(self, count: int, seed: int = 0) -> np.ndarray:
        """Area-weighted uniform samples on the surface, shape (count, 3)."""
        rng = np.random.default_rng(seed)
        areas = self.face_areas()
        idx = rng.choice(len(self.faces), size=count, p=areas / areas.sum())
        r1 = np.sqrt(rng.random(count))
        r2 = rng.random(count)
        tri = self.vertices[self.faces[idx]]
        return ((1 - r1)[:, None] * tri[:, 0]
                + (r1 * (1 - r2))[:, None] * tri[:, 1]
                + (r1 * r2)[:, None] * tri[:, 2])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    skew: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        for name in ("fx", "fy", "cx", "cy", "skew"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, self.skew, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height

    @classmethod
    def from_matrix(cls, K, width: int, height: int) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=float)
        K = K / K[2, 2]
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2], width, height, skew=K[0, 1])


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation)
        t = _frozen(self.translation).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError("rotation must be 3x3 and translation a 3-vector")
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-9:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) >= 1e-9:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rt(cls, R, t) -> "CameraPose":
        """Build a pose after projecting ``R`` onto the nearest rotation."""
        U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
        Rn = U @ Vt
        if np.linalg.det(Rn) < 0:
            Rn = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
        return cls(Rn, t)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "CameraPose":
        """Camera at ``eye`` looking toward ``target``; ``up`` is world up."""
        eye = np.asarray(eye, dtype=float)
        z = np.asarray(target, dtype=float) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        return cls.from_rt(R, -R @ eye)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    def transform(self, X) -> np.ndarray:
        """World points (N, 3) into the camera frame."""
        return np.asarray(X, dtype=float) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class ProjectionMatrix:
    """A 3x4 camera matrix, meaningful up to a nonzero scale."""

    matrix: np.ndarray

    def __post_init__(self):
        P = _frozen(self.matrix)
        if P.shape != (3, 4) or not np.all(np.isfinite(P)):
            raise ValueError("projection matrix must be a finite 3x4 array")
        s = np.linalg.svd(P[:, :3] / np.linalg.norm(P), compute_uv=False)
        if s[-1] <= 1e-10:
            raise ValueError("projection matrix left 3x3 block is rank deficient")
        object.__setattr__(self, "matrix", P)

    def normalized(self) -> "ProjectionMatrix":
        """Scaled so the third row's left part has unit norm and det(M) > 0.

        Under this scaling the third homogeneous coordinate is the depth.
        """
        P = self.matrix / np.linalg.norm(self.matrix[2, :3])
        if np.linalg.det(P[:, :3]) < 0:
            P = -P
        return ProjectionMatrix(P)


def compose_projection(K: CameraIntrinsics, pose: CameraPose) -> ProjectionMatrix:
    return ProjectionMatrix(K.matrix @ pose.matrix)


def _as_matrix(P) -> np.ndarray:
    return P.matrix if isinstance(P, ProjectionMatrix) else np.asarray(P, dtype=float)


def project_point(P, X) -> tuple[np.ndarray, bool]:
    """Project one world point; returns ``(pixel, in_front)``.

    ``in_front`` is the sign of the third homogeneous coordinate, so it flips
    when ``P`` is multiplied by a negative scalar.
    """
    M = _as_matrix(P)
    p = M[:, :3] @ np.asarray(X, dtype=float) + M[:, 3]
    if abs(p[2]) < 1e-12:
        raise PointAtInfinityError(f"point {X} lies on the principal plane")
    return p[:2] / p[2], bool(p[2] > 0)


def project_points(P, X) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection: pixels (N, 2) and third coordinates (N,).

    Points on the principal plane come back as non-finite pixels.
    """
    M = _as_matrix(P)
    p = np.asarray(X, dtype=float) @ M[:, :3].T + M[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = p[:, :2] / p[:, 2:3]
    px[np.abs(p[:, 2]) < 1e-12] = np.nan
    return px, p[:, 2]


def _raster_valid(valid, shape) -> np.ndarray:
    if valid is None:
        return _frozen(np.ones(shape, dtype=bool), dtype=bool)
    v = _frozen(valid, dtype=bool)
    if v.shape != shape:
        raise ValueError(f"validity mask shape {v.shape} != raster shape {shape}")
    return v


@dataclass(frozen=True)
class NormalMap:
    normals: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        n = np.array(self.normals, dtype=np.float64)
        if n.ndim != 3 or n.shape[2] != 3:
            raise ValueError("normals must be (H, W, 3)")
        valid = _raster_valid(self.valid, n.shape[:2])
        n[~valid] = 0.0
        if valid.any():
            err = np.abs(np.linalg.norm(n[valid], axis=1) - 1.0).max()
            if err > 1e-6:
                raise ValueError(f"valid normals must be unit length (off by {err:.2g})")
        n.setflags(write=False)
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.normals.shape[0]

    @property
    def width(self) -> int:
        return self.normals.shape[1]


@dataclass(frozen=True)
class DepthMap:
    depth: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        d = np.array(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth must be (H, W)")
        if self.valid is None:
            valid = np.isfinite(d) & (d > 0)
        else:
            valid = np.asarray(self.valid, dtype=bool)
        valid = _raster_valid(valid, d.shape)
        if np.any(~(d[valid] > 0)):
            raise ValueError("valid depths must be positive")
        d[~valid] = np.nan
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True)
class GradientImage:
    magnitude: np.ndarray
    valid: np.ndarray = None

    def __post_init__(self):
        m = np.array(self.magnitude, dtype=np.float64)
        if m.ndim != 2:
            raise ValueError("magnitude must be (H, W)")
        valid = _raster_valid(self.valid, m.shape)
        m[~valid] = 0.0
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("gradient magnitudes must be finite and nonnegative")
        m.setflags(write=False)
        object.__setattr__(self, "magnitude", m)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.magnitude.shape[0]

    @property
    def width(self) -> int:
        return self.magnitude.shape[1]


@dataclass(frozen=True)
class DerivativeKernel:
    """Pair of correlation stencils for the x and y derivatives."""

    hx: np.ndarray = field(default_factory=lambda: np.array([[-0.5, 0.0, 0.5]]))
    hy: np.ndarray = field(default_factory=lambda: np.array([[-0.5], [0.0], [0.5]]))

    def __post_init__(self):
        hx = _frozen(np.atleast_2d(self.hx))
        hy = _frozen(np.atleast_2d(self.hy))
        for h in (hx, hy):
            if h.shape[0] % 2 == 0 or h.shape[1] % 2 == 0:
                raise ValueError("stencils need odd dimensions")
            if abs(h.sum()) > 1e-12:
                raise ValueError("derivative stencils must sum to zero")
        object.__setattr__(self, "hx", hx)
        object.__setattr__(self, "hy", hy)

    @classmethod
    def central_difference(cls) -> "DerivativeKernel":
        return cls()

    def apply(self, image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Filter responses (gx, gy) with replicate padding at the borders."""
        image = np.asarray(image, dtype=np.float64)
        if image.ndim == 3:
            gx = np.stack([self.apply(image[..., c])[0] for c in range(image.shape[2])], -1)
            gy = np.stack([self.apply(image[..., c])[1] for c in range(image.shape[2])], -1)
            return gx, gy
        return (ndimage.correlate(image, self.hx, mode="nearest"),
                ndimage.correlate(image, self.hy, mode="nearest"))

    def support_valid(self, valid: np.ndarray) -> np.ndarray:
        """Pixels whose stencil taps (and centre) all land on valid pixels."""
        foot = np.zeros((max(self.hx.shape[0], self.hy.shape[0]),
                         max(self.hx.shape[1], self.hy.shape[1])), dtype=bool)
        cy, cx = foot.shape[0] // 2, foot.shape[1] // 2
        for h in (self.hx, self.hy):
            oy, ox = cy - h.shape[0] // 2, cx - h.shape[1] // 2
            foot[oy:oy + h.shape[0], ox:ox + h.shape[1]] |= h != 0
        foot[cy, cx] = True
        return ndimage.minimum_filter(np.asarray(valid, dtype=np.uint8), footprint=foot,
                                      mode="nearest").astype(bool)


@dataclass(frozen=True)
class LightDirection:
    vector: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vector).reshape(-1)
        if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) >= 1e-9:
            raise ValueError("light direction must be a unit 3-vector")
        object.__setattr__(self, "vector", v)
