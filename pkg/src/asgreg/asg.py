"""Average Shading Gradients from normal maps, plus normals from depth."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .raster import pixel_rays
from .types import CameraIntrinsics, DepthMap, DerivativeKernel, GradientImage, NormalMap

__all__ = [
    "AsgConfig",
    "ASG_SCALE",
    "asg_closed_form",
    "asg_monte_carlo",
    "normals_from_depth",
    "intensity_gradient",
    "query_gradient",
    "sample_sphere",
]

logger = logging.getLogger(__name__)

# sqrt(pi / 3): the sphere integral of (v.l)^2 is (4 pi / 3) |v|^2, halved under the root.
ASG_SCALE = float(np.sqrt(np.pi / 3.0))


@dataclass(frozen=True)
class AsgConfig:
    kernel: DerivativeKernel = field(default_factory=DerivativeKernel.central_difference)
    mc_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")


def asg_closed_form(normals: NormalMap, cfg: AsgConfig = AsgConfig()) -> GradientImage:
    gx, gy = cfg.kernel.apply(normals.normals)
    mag = ASG_SCALE * np.sqrt(np.sum(gx * gx + gy * gy, axis=2))
    return GradientImage(mag, cfg.kernel.support_valid(normals.valid))


def sample_sphere(count: int, seed: int) -> np.ndarray:
    """Uniform unit vectors from normalised Gaussian draws, shape (count, 3)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def asg_monte_carlo(normals: NormalMap, cfg: AsgConfig = AsgConfig(),
                    clamped: bool = True, chunk: int = 256) -> GradientImage:
    """Light-sphere Monte Carlo estimate of the shading-gradient average.

    ``clamped=True`` averages the gradient magnitude of the Lambertian image
    ``max(0, -n.l)`` over the sampled lights. ``clamped=False`` drops the clamp
    and evaluates ``0.5 * sqrt(integral over the sphere of |h*(n.l)|^2)``,
    with the integral taken as ``4 pi`` times the sample mean; that quantity
    converges to :func:`asg_closed_form`.

    All pixels share one seeded set of light directions, so the result is a
    deterministic function of ``(seed, mc_samples)``.
    """
    lights = sample_sphere(cfg.mc_samples, cfg.seed)
    valid = cfg.kernel.support_valid(normals.valid)
    n = normals.normals
    if not clamped:
        gx, gy = cfg.kernel.apply(n)
        # mean over lights of (a.l)^2 equals a^T (mean l l^T) a
        second = lights.T @ lights / len(lights)
        mean_sq = (np.einsum("hwi,ij,hwj->hw", gx, second, gx)
                   + np.einsum("hwi,ij,hwj->hw", gy, second, gy))
        mag = 0.5 * np.sqrt(np.maximum(4.0 * np.pi * mean_sq, 0.0))
        return GradientImage(mag, valid)

    hx = cfg.kernel.hx[:, :, None]
    hy = cfg.kernel.hy[:, :, None]
    total = np.zeros(n.shape[:2])
    for start in range(0, len(lights), chunk):
        L = lights[start:start + chunk]
        shade = np.maximum(0.0, -(n @ L.T))
        gx = ndimage.correlate(shade, hx, mode="nearest")
        gy = ndimage.correlate(shade, hy, mode="nearest")
        total += np.sqrt(gx * gx + gy * gy).sum(axis=2)
    return GradientImage(total / len(lights), valid)


def _shift(a: np.ndarray, dy: int, dx: int, fill) -> np.ndarray:
    """``out[y, x] = a[y + dy, x + dx]``, ``fill`` outside the raster."""
    H, W = a.shape[:2]
    out = np.full_like(a, fill)
    ys, yd = slice(max(dy, 0), H + min(dy, 0)), slice(max(-dy, 0), H + min(-dy, 0))
    xs, xd = slice(max(dx, 0), W + min(dx, 0)), slice(max(-dx, 0), W + min(-dx, 0))
    out[yd, xd] = a[ys, xs]
    return out


def _axis_tangent(P, q, v, dy, dx):
    """Tangent along one axis and the flatness score of the stencil used.

    Inverse depth is affine in pixel coordinates over any plane, so its
    second difference vanishes when a stencil stays on one surface. The
    central difference is used unless a one-sided stencil is strictly flatter.
    """
    qm1, qp1 = _shift(q, -dy, -dx, 0.0), _shift(q, dy, dx, 0.0)
    qm2, qp2 = _shift(q, -2 * dy, -2 * dx, 0.0), _shift(q, 2 * dy, 2 * dx, 0.0)
    vm2, vp2 = _shift(v, -2 * dy, -2 * dx, False), _shift(v, 2 * dy, 2 * dx, False)
    c_c = np.abs(qp1 - 2 * q + qm1)
    c_b = np.where(vm2, np.abs(q - 2 * qm1 + qm2), np.inf)
    c_f = np.where(vp2, np.abs(qp2 - 2 * qp1 + q), np.inf)
    Pm1, Pp1 = _shift(P, -dy, -dx, 0.0), _shift(P, dy, dx, 0.0)
    t = 0.5 * (Pp1 - Pm1)
    score = c_c.copy()
    one_sided = c_c > np.maximum(np.minimum(c_b, c_f), 1e-9 * q)
    back = one_sided & (c_b <= c_f)
    fwd = one_sided & ~back
    t[back] = (P - Pm1)[back]
    t[fwd] = (Pp1 - P)[fwd]
    score[back] = c_b[back]
    score[fwd] = c_f[fwd]
    return t, score


def normals_from_depth(depth: DepthMap, K: CameraIntrinsics) -> NormalMap:
    """Camera-frame normals from tangents of the backprojected surface.

    Tangents are central differences of the 3D points. Where the central
    stencil crosses a crease or a depth discontinuity, a one-sided stencil is
    used instead; where no stencil along an axis stays on one surface, the
    quadrant whose diagonal pixel is coplanar supplies both tangents. A pixel
    is valid only if it and its four direct neighbours carry depth.
    """
    H, W = depth.depth.shape
    ys, xs = np.mgrid[0:H, 0:W]
    v = depth.valid
    z = np.where(v, depth.depth, 0.0)
    q = np.where(v, 1.0 / np.where(v, z, 1.0), 0.0)
    P = pixel_rays(K, xs, ys) * z[..., None]

    tx, sx = _axis_tangent(P, q, v, 0, 1)
    ty, sy = _axis_tangent(P, q, v, 1, 0)
    best = sx + sy
    tol = 1e-9 * q
    for qx in (-1, 1):
        for qy in (-1, 1):
            diag_ok = _shift(v, qy, qx, False)
            pred = _shift(q, 0, qx, 0.0) + _shift(q, qy, 0, 0.0) - q
            r = np.where(diag_ok, np.abs(_shift(q, qy, qx, 0.0) - pred), np.inf)
            take = r + tol < best
            if take.any():
                ax = qx * (_shift(P, 0, qx, 0.0) - P)
                ay = qy * (_shift(P, qy, 0, 0.0) - P)
                tx[take], ty[take], best[take] = ax[take], ay[take], r[take]
    n = np.cross(tx, ty)

    valid = np.zeros_like(v)
    valid[1:-1, 1:-1] = (v[1:-1, 1:-1] & v[1:-1, 2:] & v[1:-1, :-2]
                         & v[2:, 1:-1] & v[:-2, 1:-1])
    norm = np.linalg.norm(n, axis=2)
    valid &= norm > 0
    n[valid] /= norm[valid][:, None]
    flip = np.einsum("hwi,hwi->hw", n, P) > 0
    n[flip] *= -1.0
    n[~valid] = 0.0
    return NormalMap(n, valid)


def intensity_gradient(image: np.ndarray,
                       kernel: DerivativeKernel | None = None) -> GradientImage:
    """Plain image gradient magnitude with replicate padding, no mask."""
    kernel = kernel or DerivativeKernel.central_difference()
    gx, gy = kernel.apply(np.asarray(image, dtype=np.float64))
    return GradientImage(np.sqrt(gx * gx + gy * gy))


def query_gradient(image, depth: DepthMap | None, K: CameraIntrinsics,
                   cfg: AsgConfig = AsgConfig()) -> GradientImage:
    """Gradient representation of the photograph.

    With a depth map the photograph is represented by the ASG of its
    depth-derived normals; otherwise by its intensity gradients.
    """
    image = np.asarray(image, dtype=np.float64)
    if depth is None:
        logger.warning("no query depth: falling back to intensity gradients")
        return intensity_gradient(image, cfg.kernel)
    if image.shape[:2] != depth.depth.shape:
        raise ValueError(f"image shape {image.shape[:2]} does not match depth "
                         f"shape {depth.depth.shape}")
    return asg_closed_form(normals_from_depth(depth, K), cfg)
