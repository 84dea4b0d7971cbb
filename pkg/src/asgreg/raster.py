"""Z-buffered software rasterizer producing flat-shaded normal and depth maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import CameraIntrinsics, CameraPose, DepthMap, NormalMap, TriangleMesh

__all__ = ["RenderOutput", "render", "visible_pixel_set", "backproject", "pixel_rays"]

NEAR_PLANE = 1e-6
DEPTH_TIE = 1e-9


@dataclass(frozen=True)
class RenderOutput:
    normal_map: NormalMap
    depth_map: DepthMap
    face_ids: np.ndarray
    camera_inside: bool = False

    @property
    def valid(self) -> np.ndarray:
        return self.depth_map.valid


def _clip_near(poly: np.ndarray, near: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a camera-frame polygon against z >= near."""
    out = []
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        ina, inb = a[2] >= near, b[2] >= near
        if ina:
            out.append(a)
        if ina != inb:
            s = (near - a[2]) / (b[2] - a[2])
            p = a + s * (b - a)
            p[2] = near
            out.append(p)
    return np.array(out)


def _owns_edge(dx: float, dy: float) -> bool:
    # Exactly one of (d, -d) passes, so a shared edge has a single owner.
    return dy > 0 or (dy == 0 and dx < 0)


def _raster_triangle(P2, inv_z, width, height, face, zbuf, fbuf):
    (x0, y0), (x1, y1), (x2, y2) = P2
    area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    if area == 0 or not np.isfinite(area):
        return
    if area < 0:
        P2 = P2[[0, 2, 1]]
        inv_z = inv_z[[0, 2, 1]]
        (x0, y0), (x1, y1), (x2, y2) = P2
        area = -area
    xmin = max(int(np.ceil(P2[:, 0].min())), 0)
    xmax = min(int(np.floor(P2[:, 0].max())), width - 1)
    ymin = max(int(np.ceil(P2[:, 1].min())), 0)
    ymax = min(int(np.floor(P2[:, 1].max())), height - 1)
    if xmin > xmax or ymin > ymax:
        return
    xs = np.arange(xmin, xmax + 1, dtype=np.float64)
    ys = np.arange(ymin, ymax + 1, dtype=np.float64)[:, None]
    inside = np.ones((len(ys), len(xs)), dtype=bool)
    weights = []
    verts = [(x0, y0), (x1, y1), (x2, y2)]
    for k in range(3):
        (ax, ay), (bx, by) = verts[k], verts[(k + 1) % 3]
        e = (bx - ax) * (ys - ay) - (by - ay) * (xs - ax)
        inside &= (e > 0) | ((e == 0) & _owns_edge(bx - ax, by - ay))
        weights.append(e)
    if not inside.any():
        return
    # weights[k] is the edge opposite vertex (k + 2) % 3
    l0, l1, l2 = weights[1] / area, weights[2] / area, weights[0] / area
    z = 1.0 / (l0 * inv_z[0] + l1 * inv_z[1] + l2 * inv_z[2])
    zb = zbuf[ymin:ymax + 1, xmin:xmax + 1]
    fb = fbuf[ymin:ymax + 1, xmin:xmax + 1]
    win = inside & (z < zb - DEPTH_TIE) & (z >= NEAR_PLANE * (1 - 1e-12))
    zb[win] = z[win]
    fb[win] = face


def render(mesh: TriangleMesh, K: CameraIntrinsics, pose: CameraPose,
           cull_backfaces: bool = True) -> RenderOutput:
    """Rasterize ``mesh`` at pixel centres with a depth buffer.

    Each covered pixel carries the flat normal of the nearest face, in the
    camera frame and pointing toward the camera. Faces whose winding normal
    points away from the camera are skipped unless ``cull_backfaces`` is
    False, in which case they are rendered with the normal flipped.
    """
    if len(mesh.faces) == 0:
        raise ValueError("cannot render an empty mesh")
    W, H = K.width, K.height
    Kmat = K.matrix
    Xc = pose.transform(mesh.vertices)
    normals_c = mesh.face_normals() @ pose.rotation.T
    tri_c = Xc[mesh.faces]
    facing = np.einsum("ij,ij->i", normals_c, tri_c[:, 0])
    zbuf = np.full((H, W), np.inf)
    fbuf = np.full((H, W), -1, dtype=np.int64)

    for f in range(len(mesh.faces)):
        if cull_backfaces and not facing[f] < 0:
            continue
        if facing[f] == 0:
            continue
        poly = tri_c[f]
        if poly[:, 2].max() < NEAR_PLANE:
            continue
        if poly[:, 2].min() < NEAR_PLANE:
            poly = _clip_near(poly.copy(), NEAR_PLANE)
            if len(poly) < 3:
                continue
        proj = poly @ Kmat.T
        P2 = proj[:, :2] / proj[:, 2:3]
        inv_z = 1.0 / poly[:, 2]
        for k in range(1, len(poly) - 1):
            idx = [0, k, k + 1]
            _raster_triangle(P2[idx], inv_z[idx], W, H, f, zbuf, fbuf)

    valid = fbuf >= 0
    oriented = np.where((facing < 0)[:, None], normals_c, -normals_c)
    normals = np.zeros((H, W, 3))
    normals[valid] = oriented[fbuf[valid]]
    depth = np.where(valid, zbuf, np.nan)
    lo, hi = mesh.bounds
    inside = bool(np.all(pose.center >= lo) and np.all(pose.center <= hi))
    fbuf.setflags(write=False)
    return RenderOutput(NormalMap(normals, valid), DepthMap(depth, valid), fbuf, inside)


def visible_pixel_set(output: RenderOutput) -> np.ndarray:
    """Valid pixels as an (N, 2) integer array of (x, y), row-major order."""
    ys, xs = np.nonzero(output.valid)
    return np.stack([xs, ys], axis=1)


def pixel_rays(K: CameraIntrinsics, xs, ys) -> np.ndarray:
    """Camera-frame rays with unit z through the given pixel coordinates."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    yn = (ys - K.cy) / K.fy
    xn = (xs - K.cx - K.skew * yn) / K.fx
    return np.stack([xn, yn, np.ones_like(xn)], axis=-1)


def backproject(depth: DepthMap, K: CameraIntrinsics, pose: CameraPose,
                stride: int = 1, return_pixels: bool = False):
    """World-frame points for the valid pixels of ``depth``.

    ``stride`` subsamples rows and columns. With ``return_pixels`` the (N, 2)
    source pixel coordinates are returned alongside.
    """
    valid = np.zeros_like(depth.valid)
    valid[::stride, ::stride] = depth.valid[::stride, ::stride]
    ys, xs = np.nonzero(valid)
    Xc = pixel_rays(K, xs, ys) * depth.depth[ys, xs][:, None]
    Xw = (Xc - pose.translation) @ pose.rotation
    if return_pixels:
        return Xw, np.stack([xs, ys], axis=1)
    return Xw
