"""Dense SIFT-flow matching between gradient images and 2D-3D lifting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _flowcore
from .raster import RenderOutput, pixel_rays
from .types import CameraIntrinsics, CameraPose, GradientImage

__all__ = [
    "DenseSiftField",
    "FlowField",
    "FlowParams",
    "Correspondence2D3D",
    "Correspondences",
    "dense_sift",
    "sift_flow",
    "flow_energy",
    "textured_mask",
    "consistent_pairs",
    "lift_to_3d",
]


@dataclass(frozen=True)
class DenseSiftField:
    descriptors: np.ndarray  # (H, W, cells * cells * bins) float32
    valid: np.ndarray
    cell_size: int = 4
    bins: int = 8
    _pyramid: list = field(default_factory=list, init=False, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    def pyramid(self, levels: int) -> list[np.ndarray]:
        """Descriptor rasters from full resolution down by 2x2 means; cached."""
        pyr = self._pyramid
        if not pyr:
            pyr.append(np.ascontiguousarray(self.descriptors, dtype=np.float32))
        while len(pyr) < levels:
            pyr.append(_downsample_desc(pyr[-1]))
        return pyr[:levels]


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape

    @classmethod
    def zeros(cls, shape, valid=None) -> "FlowField":
        valid = np.ones(shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        return cls(np.zeros(shape, dtype=np.int64), np.zeros(shape, dtype=np.int64), valid)

    @classmethod
    def constant(cls, shape, u: int, v: int, valid=None) -> "FlowField":
        f = cls.zeros(shape, valid)
        return cls(f.u + u, f.v + v, f.valid)


@dataclass(frozen=True)
class FlowParams:
    """Matcher settings; distances are in pixels of the respective level."""

    levels: int = 4
    coarse_radius: int = 6
    fine_radius: int = 2
    data_truncation: float = 6.0
    smoothness: float = 0.2
    smoothness_truncation: float = 0.4
    displacement_penalty: float = 0.001
    iterations: int = 2
    crop_margin: int = 2

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if min(self.coarse_radius, self.fine_radius) < 0:
            raise ValueError("search radii must be >= 0")
        for name in ("data_truncation", "smoothness", "smoothness_truncation",
                     "displacement_penalty"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def search_radius(self) -> int:
        """Coarsest-level search window, per axis, in full-resolution pixels."""
        return self.coarse_radius * 2 ** (self.levels - 1)

    @property
    def reach(self) -> int:
        """Largest displacement (full-resolution pixels) the pyramid can express."""
        top = self.levels - 1
        return self.coarse_radius * 2 ** top + sum(self.fine_radius * 2 ** k for k in range(top))


@dataclass(frozen=True)
class Correspondence2D3D:
    pixel: tuple[float, float]
    point: tuple[float, float, float]
    view: int


@dataclass(frozen=True)
class Correspondences:
    """Batch of 2D-3D correspondences stored column-wise."""

    pixels: np.ndarray
    points: np.ndarray
    views: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        views = np.broadcast_to(np.asarray(self.views, dtype=np.int64), (len(px),)).copy()
        if len(px) != len(pts):
            raise ValueError("pixels and points differ in length")
        if not (np.all(np.isfinite(px)) and np.all(np.isfinite(pts))):
            raise ValueError("correspondences must be finite")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "views", views)

    def __len__(self) -> int:
        return len(self.pixels)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return Correspondence2D3D(tuple(self.pixels[i]), tuple(self.points[i]),
                                      int(self.views[i]))
        return Correspondences(self.pixels[i], self.points[i], self.views[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @classmethod
    def from_list(cls, items) -> "Correspondences":
        items = list(items)
        return cls(np.array([c.pixel for c in items], dtype=float).reshape(-1, 2),
                   np.array([c.point for c in items], dtype=float).reshape(-1, 3),
                   np.array([c.view for c in items], dtype=np.int64))

    @classmethod
    def concatenate(cls, parts) -> "Correspondences":
        parts = list(parts)
        if not parts:
            return cls(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64))
        return cls(np.vstack([p.pixels for p in parts]), np.vstack([p.points for p in parts]),
                   np.concatenate([p.views for p in parts]))


def dense_sift(gradient: GradientImage, cell_size: int = 4, cells: int = 4,
               bins: int = 8) -> DenseSiftField:
    """Per-pixel SIFT-style descriptors of a gradient-magnitude raster.

    The raster is differentiated again; orientations are soft-binned and
    summed over a ``cells x cells`` grid of ``cell_size`` square cells
    centred on the pixel. Descriptors are L2-normalised, clamped at 0.2
    and renormalised.
    """
    img = gradient.magnitude
    H, W = img.shape
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    mag = np.hypot(gx, gy).astype(np.float32)
    theta = (np.mod(np.arctan2(gy, gx), 2 * np.pi) * (bins / (2 * np.pi))).astype(np.float32)
    lo = np.floor(theta)
    frac = theta - lo
    lo = lo.astype(np.int64) % bins

    # integral image per bin, padded so any cell window can be read directly
    pad = cell_size * cells
    hist = np.zeros((H, W, bins))
    rows, cols = np.mgrid[0:H, 0:W]
    hist[rows, cols, lo] = mag * (1 - frac)
    hist[rows, cols, (lo + 1) % bins] += mag * frac
    integral = np.zeros((H + 2 * pad + 1, W + 2 * pad + 1, bins))
    integral[pad + 1:pad + 1 + H, pad + 1:pad + 1 + W] = hist
    integral = integral.cumsum(axis=0).cumsum(axis=1)
    c = cell_size
    cellsum = np.zeros((H + 2 * pad, W + 2 * pad, bins))
    cellsum[:1 - c or None, :1 - c or None] = (integral[c:, c:] - integral[:-c, c:]
                                               - integral[c:, :-c] + integral[:-c, :-c])


    desc = _flowcore.sift_descriptors(cellsum, pad, cell_size, cells, 0.2)
    desc[~gradient.valid] = 0.0
    return DenseSiftField(desc, gradient.valid.copy(), cell_size, bins)


def textured_mask(gradient: GradientImage, fraction: float = 0.1) -> np.ndarray:
    """Valid pixels whose magnitude exceeds ``fraction`` of the 99th percentile."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    vals = gradient.magnitude[gradient.valid]
    if vals.size == 0:
        return np.zeros(gradient.valid.shape, dtype=bool)
    level = fraction * np.percentile(vals, 99)
    return gradient.valid & (gradient.magnitude > level)


def _downsample_desc(d: np.ndarray) -> np.ndarray:
    # 2x2 means; an odd last row or column is paired with itself
    H, W = d.shape[:2]
    r0, r1 = d[0::2], d[1::2]
    if H % 2:
        r1 = np.concatenate([r1, d[-1:]], axis=0)
    rows = r0 + r1
    c0, c1 = rows[:, 0::2], rows[:, 1::2]
    if W % 2:
        c1 = np.concatenate([c1, rows[:, -1:]], axis=1)
    return np.float32(0.25) * (c0 + c1)


def _downsample_mask(m: np.ndarray) -> np.ndarray:
    H, W = m.shape
    m = np.pad(m, ((0, H % 2), (0, W % 2)))
    return m[0::2, 0::2] | m[1::2, 0::2] | m[0::2, 1::2] | m[1::2, 1::2]


def _upsample_flow(f: np.ndarray, shape) -> np.ndarray:
    up = 2 * np.repeat(np.repeat(f, 2, axis=0), 2, axis=1)
    return np.ascontiguousarray(up[:shape[0], :shape[1]])


def sift_flow(source: DenseSiftField, target: DenseSiftField, mask: np.ndarray,
              params: FlowParams = FlowParams()) -> FlowField:
    """Integer flow such that ``target[p + w(p)]`` matches ``source[p]``.

    Minimises truncated-L1 descriptor distance, a small displacement penalty
    and truncated-L1 smoothness between 4-neighbours, coarse to fine over a
    descriptor pyramid with min-sum message passing at each level. Only
    ``mask`` pixels carry a data term and come back valid.
    """
    if source.shape != target.shape:
        raise ValueError("source and target must have equal dimensions")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != source.shape:
        raise ValueError("mask shape must match the descriptor fields")
    H, W = source.shape
    if not mask.any():
        return FlowField(np.zeros((H, W), np.int64), np.zeros((H, W), np.int64),
                         np.zeros((H, W), bool))

    srcs, tgts, masks = source.pyramid(params.levels), target.pyramid(params.levels), [mask]
    for _ in range(params.levels - 1):
        masks.append(_downsample_mask(masks[-1]))

    u = v = None
    for level in range(params.levels - 1, -1, -1):
        S, T = srcs[level], tgts[level]
        M = masks[level]
        h, w = M.shape
        if u is None:
            u = np.zeros((h, w), np.int64)
            v = np.zeros((h, w), np.int64)
            r = params.coarse_radius
        else:
            u, v = _upsample_flow(u, (h, w)), _upsample_flow(v, (h, w))
            r = params.fine_radius
        ys, xs = np.nonzero(M)
        m = params.crop_margin
        y0, y1 = max(ys.min() - m, 0), min(ys.max() + m + 1, h)
        x0, x1 = max(xs.min() - m, 0), min(xs.max() + m + 1, w)
        uc = np.ascontiguousarray(u[y0:y1, x0:x1])
        vc = np.ascontiguousarray(v[y0:y1, x0:x1])
        D = _flowcore.data_cost(S, T, M, u, v, r, np.float32(params.data_truncation),
                                np.float32(params.displacement_penalty), y0, y1, x0, x1)
        # messages only travel near textured pixels; the rest carry no data
        active = ndimage.binary_dilation(M[y0:y1, x0:x1], np.ones((2 * m + 1, 2 * m + 1), bool))
        labels = _flowcore.belief_propagation(
            D, active, uc, vc, r, np.float32(params.smoothness),
            np.float32(params.smoothness_truncation), params.iterations)
        n = 2 * r + 1
        u[y0:y1, x0:x1] = uc + labels % n - r
        v[y0:y1, x0:x1] = vc + labels // n - r

    ys, xs = np.mgrid[0:H, 0:W]
    inside = (xs + u >= 0) & (xs + u < W) & (ys + v >= 0) & (ys + v < H)
    valid = mask & inside
    u = np.where(valid, u, 0)
    v = np.where(valid, v, 0)
    return FlowField(u, v, valid)


def flow_energy(source: DenseSiftField, target: DenseSiftField, mask: np.ndarray,
                flow: FlowField, params: FlowParams = FlowParams()) -> float:
    """Full-resolution matching energy of ``flow`` over the masked pixels.

    Data and displacement terms sum over masked pixels; smoothness sums over
    4-neighbour pairs with both ends masked. Out-of-raster targets cost inf.
    """
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    ys, xs = np.nonzero(mask)
    tu, tv = xs + flow.u[ys, xs], ys + flow.v[ys, xs]
    if np.any((tu < 0) | (tu >= W) | (tv < 0) | (tv >= H)):
        return float("inf")
    diff = np.abs(source.descriptors[ys, xs].astype(np.float64)
                  - target.descriptors[tv, tu].astype(np.float64)).sum(axis=1)
    e = np.minimum(diff, params.data_truncation).sum()
    e += params.displacement_penalty * (np.abs(flow.u[ys, xs]) + np.abs(flow.v[ys, xs])).sum()
    a, t = params.smoothness, params.smoothness_truncation
    for comp in (flow.u, flow.v):
        both = mask[:, 1:] & mask[:, :-1]
        e += np.minimum(a * np.abs(np.diff(comp, axis=1)), t)[both].sum()
        both = mask[1:, :] & mask[:-1, :]
        e += np.minimum(a * np.abs(np.diff(comp, axis=0)), t)[both].sum()
    return float(e)


def consistent_pairs(forward: FlowField, backward: FlowField,
                     tol: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Pixel pairs joined by two (nearly) opposite flow vectors.

    Returns ``(p, q)`` as two (N, 2) integer arrays of (x, y): ``q = p +
    forward(p)``, kept when ``|p - (q + backward(q))| <= tol``.
    """
    if forward.shape != backward.shape:
        raise ValueError("flow fields must have equal dimensions")
    ys, xs = np.nonzero(forward.valid)
    qx, qy = xs + forward.u[ys, xs], ys + forward.v[ys, xs]
    ok = backward.valid[qy, qx]
    rx, ry = qx + backward.u[qy, qx], qy + backward.v[qy, qx]
    ok &= np.hypot(rx - xs, ry - ys) <= tol
    return np.stack([xs[ok], ys[ok]], 1), np.stack([qx[ok], qy[ok]], 1)


def lift_to_3d(pairs, render: RenderOutput, K: CameraIntrinsics, pose: CameraPose,
               view: int = 0) -> Correspondences:
    """Turn (query pixel, render pixel) pairs into 2D-3D correspondences.

    The render pixel is backprojected through the render's depth under the
    camera it was rendered with; pairs landing on invalid render pixels are
    dropped.
    """
    p, q = (np.asarray(a, dtype=np.int64).reshape(-1, 2) for a in pairs)
    keep = render.valid[q[:, 1], q[:, 0]]
    p, q = p[keep], q[keep]
    z = render.depth_map.depth[q[:, 1], q[:, 0]]
    Xc = pixel_rays(K, q[:, 0], q[:, 1]) * z[:, None]
    Xw = (Xc - pose.translation) @ pose.rotation
    return Correspondences(p.astype(float), Xw, np.full(len(p), view, dtype=np.int64))
