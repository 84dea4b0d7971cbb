"""End-to-end registration of a photograph against an untextured mesh."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .asg import AsgConfig, asg_closed_form, query_gradient
from .flow import FlowParams, consistent_pairs, dense_sift, lift_to_3d, sift_flow, textured_mask
from .pose import PoseHypothesis, RansacParams, ransac_refine
from .raster import render
from .types import CameraIntrinsics, CameraPose, DepthMap, TriangleMesh
from .verify import build_graph, camera_delta, select_pose

__all__ = [
    "RegistrationConfig",
    "HypothesisRecord",
    "RegistrationReport",
    "RegistrationError",
    "perturb_pose",
    "register",
]

logger = logging.getLogger(__name__)

INTRINSICS_MODES = ("known", "estimate")


class RegistrationError(RuntimeError):
    """A registration stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class RegistrationConfig:
    """Registration settings.

    ``sigma_translation=None`` means 2 % of the mesh bounding-box diagonal.
    ``intrinsics_mode`` is ``"estimate"`` (DLT, all eleven parameters) or
    ``"known"`` (EPnP with the supplied intrinsics).
    """

    coarse_poses: int = 15
    sigma_translation: float | None = None
    sigma_rotation_deg: float = 2.0
    intrinsics_mode: str = "estimate"
    asg: AsgConfig = field(default_factory=AsgConfig)
    flow: FlowParams = field(default_factory=FlowParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    verify_stride: int = 2
    texture_fraction: float = 0.1
    consistency_tol: float = 1.0
    min_component: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.coarse_poses < 1:
            raise ValueError("coarse_poses must be >= 1")
        if self.sigma_translation is not None and self.sigma_translation < 0:
            raise ValueError("sigma_translation must be >= 0")
        if self.sigma_rotation_deg < 0:
            raise ValueError("sigma_rotation_deg must be >= 0")
        if self.intrinsics_mode not in INTRINSICS_MODES:
            raise ValueError(f"intrinsics_mode must be one of {INTRINSICS_MODES}")
        if self.verify_stride < 1:
            raise ValueError("verify_stride must be >= 1")

    def translation_sigma(self, mesh: TriangleMesh) -> float:
        if self.sigma_translation is not None:
            return self.sigma_translation
        return 0.02 * mesh.diagonal


@dataclass(frozen=True)
class HypothesisRecord:
    """What happened to one coarse pose."""

    index: int
    coarse_pose: CameraPose
    correspondences: int
    hypothesis: PoseHypothesis | None = None
    error: str | None = None

    @property
    def consensus(self) -> float:
        return 0.0 if self.hypothesis is None else self.hypothesis.consensus

    @property
    def iterations(self) -> int:
        return 0 if self.hypothesis is None else self.hypothesis.iterations


@dataclass
class RegistrationReport:
    success: bool
    camera: tuple[CameraIntrinsics, CameraPose] | None
    selected: int | None
    component: tuple[int, ...]
    records: list[HypothesisRecord]
    edges: list[tuple[int, int, float]]
    threshold: float
    timings: dict[str, float]
    warnings: list[str] = field(default_factory=list)
    initial_delta: float | None = None
    final_delta: float | None = None

    @property
    def pose(self) -> CameraPose | None:
        return None if self.camera is None else self.camera[1]


def perturb_pose(initial: CameraPose, sigma_t: float, sigma_r_deg: float, seed: int = 0,
                 count: int = 15) -> list[CameraPose]:
    """Noisy copies of ``initial``.

    Each copy adds isotropic Gaussian noise of ``sigma_t`` to the translation
    and left-multiplies the rotation by a rotation about a uniformly random
    axis whose angle is Gaussian with ``sigma_r_deg`` degrees.
    """
    if sigma_t < 0 or sigma_r_deg < 0:
        raise ValueError("sigmas must be >= 0")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        dt = rng.normal(0.0, sigma_t, 3) if sigma_t > 0 else np.zeros(3)
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        angle = rng.normal(0.0, np.deg2rad(sigma_r_deg)) if sigma_r_deg > 0 else 0.0
        R = Rotation.from_rotvec(angle * axis).as_matrix() @ initial.rotation
        out.append(CameraPose.from_rt(R, initial.translation + dt))
    return out


def _refine_view(i, coarse, mesh, K, dq, mq, cfg):
    out = render(mesh, K, coarse)
    if not out.valid.any():
        return HypothesisRecord(i, coarse, 0, error="render: model not visible")
    gr = asg_closed_form(out.normal_map, cfg.asg)
    dr = dense_sift(gr)
    mr = textured_mask(gr, cfg.texture_fraction)
    forward = sift_flow(dq, dr, mq, cfg.flow)
    backward = sift_flow(dr, dq, mr, cfg.flow)
    corrs = lift_to_3d(consistent_pairs(forward, backward, cfg.consistency_tol),
                       out, K, coarse, view=i)
    if len(corrs) < cfg.ransac.sample_size:
        return HypothesisRecord(i, coarse, len(corrs), error="flow: too few correspondences")
    mode = "epnp" if cfg.intrinsics_mode == "known" else "dlt"
    try:
        hyp = ransac_refine(corrs, mode, cfg.ransac, K=K if mode == "epnp" else None,
                            image_size=K.size)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        return HypothesisRecord(i, coarse, len(corrs), error=f"refine: {exc}")
    return HypothesisRecord(i, coarse, len(corrs), hyp)


def register(mesh: TriangleMesh, image, depth: DepthMap | None, K: CameraIntrinsics,
             initial: CameraPose, config: RegistrationConfig = RegistrationConfig(),
             ground_truth: tuple[CameraIntrinsics, CameraPose] | None = None) -> RegistrationReport:
    """Refine ``initial`` so the mesh lines up with the photograph ``image``.

    ``K`` is the known calibration, or in estimate mode the guess used to
    render the coarse views. With ``ground_truth`` the report carries the
    mutual reprojection error of the initial and final cameras to it.
    """
    timings: dict[str, float] = {}
    warnings: list[str] = []
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or image.shape != (K.height, K.width):
        raise RegistrationError("input", f"image shape {image.shape} does not match "
                                         f"intrinsics size {K.height}x{K.width}")

    t0 = time.perf_counter()
    if depth is None:
        warnings.append("no query depth: matched on intensity gradients")
    try:
        gq = query_gradient(image, depth, K, config.asg)
    except ValueError as exc:
        raise RegistrationError("query_gradient", str(exc)) from exc
    dq = dense_sift(gq)
    mq = textured_mask(gq, config.texture_fraction)
    timings["query"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    coarse = perturb_pose(initial, config.translation_sigma(mesh), config.sigma_rotation_deg,
                          config.seed, config.coarse_poses)
    if mq.any():
        records = [_refine_view(i, c, mesh, K, dq, mq, config) for i, c in enumerate(coarse)]
    else:
        warnings.append("query gradient has no textured pixels")
        records = [HypothesisRecord(i, c, 0, error="flow: empty query mask")
                   for i, c in enumerate(coarse)]
    timings["views"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    kept = [r for r in records if r.hypothesis is not None]
    camera, selected, component, edges, threshold = None, None, (), [], 0.05 * max(K.size)
    if kept:
        graph = build_graph([r.hypothesis for r in kept], mesh, K.size, config.verify_stride)
        sel = select_pose(graph, config.min_component)
        edges = [(kept[i].index, kept[j].index, d) for i, j, d in graph.edge_rows()]
        component = tuple(kept[i].index for i in sel.component)
        threshold = graph.threshold
        if sel.success:
            selected = kept[sel.index].index
            camera = _final_camera(sel.hypothesis, K, config)
    timings["verify"] = time.perf_counter() - t0

    report = RegistrationReport(camera is not None, camera, selected, component, records, edges,
                                threshold, timings, warnings)
    if ground_truth is not None:
        t0 = time.perf_counter()
        report.initial_delta = camera_delta(mesh, (K, initial), ground_truth, config.verify_stride)
        if camera is not None:
            report.final_delta = camera_delta(mesh, camera, ground_truth, config.verify_stride)
        timings["ground_truth"] = time.perf_counter() - t0
    return report


def _final_camera(h: PoseHypothesis, K: CameraIntrinsics, cfg: RegistrationConfig):
    if h.decomposed is None:
        return None
    Kh, pose = h.decomposed
    if cfg.intrinsics_mode == "known":
        return K, pose
    return CameraIntrinsics(Kh.fx, Kh.fy, Kh.cx, Kh.cy, K.width, K.height, Kh.skew), pose
