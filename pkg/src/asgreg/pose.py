"""Camera estimation from 2D-3D correspondences: DLT, EPnP and RANSAC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _posecore
from .flow import Correspondences
from .types import CameraIntrinsics, CameraPose, ProjectionMatrix, compose_projection

__all__ = [
    "DegenerateConfigurationError",
    "DecompositionError",
    "RefinementFailedError",
    "PoseHypothesis",
    "RansacParams",
    "BEHIND_PENALTY",
    "dlt",
    "decompose",
    "epnp",
    "ransac_refine",
    "reprojection_errors",
    "reprojection_rmse",
]

BEHIND_PENALTY = 1e6


class DegenerateConfigurationError(ValueError):
    """The point configuration does not determine the requested model."""


class DecompositionError(ValueError):
    """A projection matrix cannot be factored into intrinsics and pose."""


class RefinementFailedError(RuntimeError):
    """Every RANSAC sample produced a degenerate fit."""


def _arrays(corrs) -> tuple[np.ndarray, np.ndarray]:
    """Pixels (N, 2) and points (N, 3) from any supported correspondence form."""
    if isinstance(corrs, Correspondences):
        return corrs.pixels, corrs.points
    if isinstance(corrs, tuple) and len(corrs) == 2 and not hasattr(corrs[0], "pixel"):
        x = np.asarray(corrs[0], dtype=float).reshape(-1, 2)
        X = np.asarray(corrs[1], dtype=float).reshape(-1, 3)
        if len(x) != len(X):
            raise ValueError("pixels and points differ in length")
        return x, X
    c = Correspondences.from_list(corrs)
    return c.pixels, c.points


def _similarity(pts: np.ndarray, target: float) -> np.ndarray:
    """Homogeneous transform moving the centroid to 0 and the mean norm to ``target``."""
    d = pts.shape[1]
    c = pts.mean(axis=0)
    mean = np.linalg.norm(pts - c, axis=1).mean()
    s = target / mean if mean > 0 else 1.0
    T = np.eye(d + 1)
    T[:d, :d] *= s
    T[:d, d] = -s * c
    return T


def _scatter_ratio(X: np.ndarray) -> float:
    A = X - X.mean(axis=0)
    w = np.linalg.eigvalsh(A.T @ A)
    return w[0] / w[-1] if w[-1] > 0 else 0.0


def dlt(corrs) -> ProjectionMatrix:
    """Normalised direct linear transform for the full 3x4 camera matrix.

    Raises :class:`DegenerateConfigurationError` for (near-)coplanar points:
    when the smallest to largest eigenvalue ratio of the 3D scatter matrix is
    below 1e-8, or when the design matrix has a second near-null direction
    (second-smallest to largest singular value below 1e-6).
    """
    x, X = _arrays(corrs)
    n = len(x)
    if n < 6:
        raise ValueError(f"DLT needs at least 6 correspondences, got {n}")
    if _scatter_ratio(X) < 1e-8:
        raise DegenerateConfigurationError("3D points are (nearly) coplanar")
    T = _similarity(x, np.sqrt(2.0))
    U = _similarity(X, np.sqrt(3.0))
    xn = x @ T[:2, :2].T + T[:2, 2]
    Xh = np.hstack([X @ U[:3, :3].T + U[:3, 3], np.ones((n, 1))])
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, :1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:] * Xh
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[-2] < 1e-6 * s[0]:
        raise DegenerateConfigurationError("DLT system has more than one null direction")
    Pn = Vt[-1].reshape(3, 4)
    P = np.linalg.solve(T, Pn @ U)
    try:
        return ProjectionMatrix(P).normalized()
    except ValueError as exc:
        raise DegenerateConfigurationError(str(exc)) from exc


def decompose(P, image_size: tuple[int, int] | None = None) -> tuple[CameraIntrinsics, CameraPose]:
    """Factor ``P`` into upper-triangular intrinsics and a rigid pose.

    The sign and scale of ``P`` are irrelevant. ``image_size`` is
    ``(width, height)``; without it the size is inferred from the principal
    point as ``(round(2 cx + 1), round(2 cy + 1))``, floored at 1.
    """
    M = np.asarray(P.matrix if isinstance(P, ProjectionMatrix) else P, dtype=float)
    if M.shape != (3, 4) or not np.all(np.isfinite(M)):
        raise DecompositionError("expected a finite 3x4 matrix")
    s = np.linalg.svd(M[:, :3], compute_uv=False)
    if s[0] == 0 or s[-1] <= 1e-10 * s[0]:
        raise DecompositionError("left 3x3 block is not invertible")
    M = M / np.linalg.norm(M[2, :3])
    if np.linalg.det(M[:, :3]) < 0:
        M = -M
    K, R = linalg.rq(M[:, :3])
    D = np.diag(np.sign(np.diag(K)))
    K, R = K @ D, D @ R
    t = np.linalg.solve(K, M[:, 3])
    K = K / K[2, 2]
    if image_size is None:
        image_size = (max(1, int(round(2 * K[0, 2] + 1))), max(1, int(round(2 * K[1, 2] + 1))))
    intr = CameraIntrinsics.from_matrix(K, int(image_size[0]), int(image_size[1]))
    return intr, CameraPose.from_rt(R, t)


def _as_projection(model, K: CameraIntrinsics | None = None) -> np.ndarray:
    """Camera matrix scaled so its third coordinate is the signed depth."""
    if isinstance(model, CameraPose):
        if K is None:
            raise ValueError("a pose needs intrinsics to project")
        model = (K, model)
    if isinstance(model, tuple) and len(model) == 2:
        # K [R | t] already has a unit third row and a positive determinant
        return model[0].matrix @ model[1].matrix
    P = model if isinstance(model, ProjectionMatrix) else ProjectionMatrix(model)
    M = P.matrix / np.linalg.norm(P.matrix[2, :3])
    return -M if np.linalg.det(M[:, :3]) < 0 else M


def reprojection_errors(model, corrs, K: CameraIntrinsics | None = None,
                        penalty: float = BEHIND_PENALTY) -> np.ndarray:
    """Per-correspondence pixel distance; points at or behind the camera cost ``penalty``.

    ``model`` is a :class:`ProjectionMatrix` (or 3x4 array), a
    ``(CameraIntrinsics, CameraPose)`` pair, or a :class:`CameraPose` with ``K``.
    """
    x, X = _arrays(corrs)
    P = _as_projection(model, K)
    p = X @ P[:, :3].T + P[:, 3]
    front = p[:, 2] > 1e-12
    err = np.full(len(x), float(penalty))
    err[front] = np.linalg.norm(p[front, :2] / p[front, 2:3] - x[front], axis=1)
    return err


def reprojection_rmse(model, corrs, K: CameraIntrinsics | None = None,
                      penalty: float = BEHIND_PENALTY) -> float:
    e = reprojection_errors(model, corrs, K, penalty)
    return float(np.sqrt(np.mean(e * e))) if len(e) else 0.0


# ---------------------------------------------------------------- EPnP


def epnp(corrs, K: CameraIntrinsics) -> CameraPose:
    """Pose from >= 4 correspondences with known intrinsics.

    Points are expressed as barycentric weights of four control points along
    the principal axes of the point cloud, or three in the planar case. The
    camera-frame control points lie in the span of the smallest right
    singular vectors of the projection system; the span dimension is tried
    at 1, 2 and 3, each solved by linearised distance constraints and
    Gauss-Newton, and the pose with the least reprojection error is kept.
    """
    x, X = _arrays(corrs)
    if len(x) < 4:
        raise ValueError(f"EPnP needs at least 4 correspondences, got {len(x)}")
    status, R, t = _posecore.epnp_core(np.ascontiguousarray(x), np.ascontiguousarray(X),
                                       K.matrix, BEHIND_PENALTY)
    if status == 1:
        raise DegenerateConfigurationError("3D points are coincident or collinear")
    if status == 2:
        raise DegenerateConfigurationError("no EPnP case produced a valid pose")
    return CameraPose.from_rt(R, t)


# ---------------------------------------------------------------- RANSAC


@dataclass(frozen=True)
class RansacParams:
    """RANSAC settings; ``inlier_threshold=None`` means 1 % of the longest image side."""

    inlier_threshold: float | None = None
    min_consensus: float = 0.65
    max_iterations: int = 500
    sample_size: int = 6
    seed: int = 0
    refit: bool = True

    def __post_init__(self):
        if self.inlier_threshold is not None and not self.inlier_threshold > 0:
            raise ValueError("inlier_threshold must be positive")
        if not 0 < self.min_consensus <= 1:
            raise ValueError("min_consensus must be in (0, 1]")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.sample_size < 4:
            raise ValueError("sample_size must be >= 4")

    def threshold(self, image_size: tuple[int, int] | None) -> float:
        if self.inlier_threshold is not None:
            return float(self.inlier_threshold)
        if image_size is None:
            raise ValueError("inlier_threshold unset and no image size to derive it from")
        return 0.01 * max(image_size)


@dataclass(frozen=True)
class PoseHypothesis:
    """A refined camera with its RANSAC consensus.

    ``sample_projection`` is the best minimal-sample fit; ``projection`` is
    the final camera, which equals the inlier re-fit when ``refit_used``.
    """

    projection: ProjectionMatrix
    decomposed: tuple[CameraIntrinsics, CameraPose] | None
    inliers: np.ndarray
    consensus: float
    rmse: float
    iterations: int
    sample_projection: ProjectionMatrix
    refit_used: bool = False

    @property
    def pose(self) -> CameraPose | None:
        return None if self.decomposed is None else self.decomposed[1]

    @property
    def intrinsics(self) -> CameraIntrinsics | None:
        return None if self.decomposed is None else self.decomposed[0]


_FULL = ("dlt", "full-dlt", "full", "estimate")
_KNOWN = ("epnp", "known-intrinsics", "known")


def _fitter(mode: str, K: CameraIntrinsics | None, sample_size: int):
    if mode in _FULL:
        if sample_size < 6:
            raise ValueError("DLT mode needs sample_size >= 6")
        return lambda x, X: dlt((x, X))
    if mode in _KNOWN:
        if K is None:
            raise ValueError("known-intrinsics mode needs K")
        return lambda x, X: epnp((x, X), K)
    raise ValueError(f"unknown mode {mode!r}")


def _score(model, x, X, K, thr):
    err = reprojection_errors(model, (x, X), K)
    inl = np.flatnonzero(err < thr)
    rmse = float(np.sqrt(np.mean(err[inl] ** 2))) if len(inl) else np.inf
    return inl, rmse


def ransac_refine(corrs, mode: str = "dlt", params: RansacParams = RansacParams(),
                  K: CameraIntrinsics | None = None,
                  image_size: tuple[int, int] | None = None) -> PoseHypothesis:
    """Robust camera fit: random minimal samples scored by consensus.

    Stops as soon as a hypothesis reaches ``min_consensus`` or after
    ``max_iterations``. Equal consensus is broken by the lower inlier RMSE.
    The winner is re-fit on its inliers and the re-fit is kept only if its
    consensus does not shrink. ``mode`` is ``"dlt"`` (all eleven camera
    parameters) or ``"epnp"`` (pose only, ``K`` required).
    """
    x, X = _arrays(corrs)
    n = len(x)
    if n < params.sample_size:
        raise ValueError(f"need at least {params.sample_size} correspondences, got {n}")
    if image_size is None and K is not None:
        image_size = K.size
    thr = params.threshold(image_size)
    fit = _fitter(mode, K, params.sample_size)
    rng = np.random.default_rng(params.seed)

    best = None  # (model, inliers, rmse)
    it = 0
    for it in range(1, params.max_iterations + 1):
        idx = rng.choice(n, params.sample_size, replace=False)
        try:
            model = fit(x[idx], X[idx])
            inl, rmse = _score(model, x, X, K, thr)
        except (ValueError, np.linalg.LinAlgError):
            continue
        if best is None or len(inl) > len(best[1]) or (len(inl) == len(best[1]) and rmse < best[2]):
            best = (model, inl, rmse)
        if len(best[1]) >= params.min_consensus * n:
            break
    if best is None:
        raise RefinementFailedError(f"all {it} samples were degenerate")

    sample_model = best[0]
    refit_used = False
    if params.refit and len(best[1]) >= params.sample_size:
        try:
            model = fit(x[best[1]], X[best[1]])
            inl, rmse = _score(model, x, X, K, thr)
            if len(inl) >= len(best[1]):
                best = (model, inl, rmse)
                refit_used = True
        except (ValueError, np.linalg.LinAlgError):
            pass

    def as_projection(model):
        if isinstance(model, CameraPose):
            return compose_projection(K, model).normalized()
        return model

    model = best[0]
    if isinstance(model, CameraPose):
        decomposed = (K, model)
    else:
        try:
            decomposed = decompose(model, image_size)
        except (DecompositionError, ValueError):
            decomposed = None
    return PoseHypothesis(as_projection(model), decomposed, best[1], len(best[1]) / n,
                          best[2], it, as_projection(sample_model), refit_used)
