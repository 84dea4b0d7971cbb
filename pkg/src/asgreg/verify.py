"""Plausibility check over refined poses: mutual reprojection error and a compatibility graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pose import BEHIND_PENALTY, PoseHypothesis, decompose
from .raster import backproject, render
from .types import CameraIntrinsics, CameraPose, ProjectionMatrix, TriangleMesh, project_points

__all__ = [
    "IncomparableError",
    "CompatibilityGraph",
    "Selection",
    "mutual_reprojection_error",
    "visible_points",
    "camera_delta",
    "build_graph",
    "select_pose",
    "THRESHOLD_FRACTION",
]

THRESHOLD_FRACTION = 0.05


class IncomparableError(ValueError):
    """A camera sees no part of the model, so the error is undefined."""


def _matrix(P) -> np.ndarray:
    if isinstance(P, ProjectionMatrix):
        return P.matrix
    if isinstance(P, tuple) and len(P) == 2:
        return P[0].matrix @ P[1].matrix
    return np.asarray(P, dtype=float)


def _mean_distance(A: np.ndarray, B: np.ndarray, X: np.ndarray) -> float:
    a, _ = project_points(A, X)
    b, _ = project_points(B, X)
    d = np.linalg.norm(a - b, axis=1)
    d[~np.isfinite(d)] = BEHIND_PENALTY
    return float(d.mean())


def mutual_reprojection_error(P, P2, visible, visible2) -> float:
    """Symmetric mean pixel distance between two cameras over the model.

    ``visible`` and ``visible2`` are the 3D model points seen by ``P`` and
    ``P2`` respectively. Every point of both sets is projected by both
    cameras, without an occlusion test under the other camera. Cameras are
    :class:`ProjectionMatrix`, 3x4 arrays or ``(K, pose)`` pairs. Points on
    a principal plane count ``BEHIND_PENALTY`` pixels.
    """
    X1 = np.asarray(visible, dtype=float).reshape(-1, 3)
    X2 = np.asarray(visible2, dtype=float).reshape(-1, 3)
    if len(X1) == 0 or len(X2) == 0:
        raise IncomparableError("empty visibility set")
    A, B = _matrix(P), _matrix(P2)
    # the summand is symmetric in (A, B), and so is the sum of the two means
    return 0.5 * (_mean_distance(A, B, X1) + _mean_distance(A, B, X2))


def visible_points(mesh: TriangleMesh, K: CameraIntrinsics, pose: CameraPose,
                   stride: int = 2) -> np.ndarray:
    """Model points seen by a camera: backprojected render pixels at ``stride``."""
    out = render(mesh, K, pose)
    return backproject(out.depth_map, K, pose, stride=stride)


def camera_delta(mesh: TriangleMesh, cam, cam2, stride: int = 2) -> float:
    """Mutual reprojection error of two ``(K, pose)`` cameras on ``mesh``."""
    V1 = visible_points(mesh, cam[0], cam[1], stride)
    V2 = visible_points(mesh, cam2[0], cam2[1], stride)
    return mutual_reprojection_error(cam, cam2, V1, V2)


@dataclass(frozen=True)
class CompatibilityGraph:
    """Hypotheses joined where their mutual reprojection error is below ``threshold``.

    ``deltas`` maps every comparable pair ``(i, j)``, ``i < j``, to its error;
    incomparable pairs are absent.
    """

    nodes: tuple[PoseHypothesis, ...]
    edges: tuple[tuple[int, int], ...]
    deltas: dict
    threshold: float

    def neighbours(self) -> list[list[int]]:
        adj = [[] for _ in self.nodes]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def components(self) -> list[list[int]]:
        """Connected components by iterative depth-first search, in discovery order."""
        adj = self.neighbours()
        seen = [False] * len(self.nodes)
        comps = []
        for start in range(len(self.nodes)):
            if seen[start]:
                continue
            seen[start] = True
            stack, comp = [start], []
            while stack:
                u = stack.pop()
                comp.append(u)
                for w in adj[u]:
                    if not seen[w]:
                        seen[w] = True
                        stack.append(w)
            comps.append(sorted(comp))
        return comps

    def edge_rows(self) -> list[tuple[int, int, float]]:
        return [(i, j, float(self.deltas[(i, j)])) for i, j in self.edges]


def _camera_of(h: PoseHypothesis, image_size) -> tuple[CameraIntrinsics, CameraPose] | None:
    cam = h.decomposed
    if cam is None:
        try:
            cam = decompose(h.projection, image_size)
        except ValueError:
            return None
    K, pose = cam
    if K.size != tuple(image_size):
        K = CameraIntrinsics(K.fx, K.fy, K.cx, K.cy, image_size[0], image_size[1], K.skew)
    return K, pose


def build_graph(hypotheses, mesh: TriangleMesh, image_size: tuple[int, int],
                stride: int = 2, threshold_fraction: float = THRESHOLD_FRACTION) -> CompatibilityGraph:
    """Render every hypothesis, compare all pairs and connect the compatible ones.

    ``image_size`` is ``(width, height)``; the threshold is
    ``threshold_fraction`` of the longer side. A hypothesis that cannot be
    factored into a camera or sees nothing stays isolated.
    """
    hyps = tuple(hypotheses)
    if not hyps:
        raise ValueError("need at least one hypothesis")
    threshold = threshold_fraction * max(image_size)
    visible = []
    for h in hyps:
        cam = _camera_of(h, image_size)
        visible.append(None if cam is None else visible_points(mesh, cam[0], cam[1], stride))
    deltas, edges = {}, []
    for i in range(len(hyps)):
        for j in range(i + 1, len(hyps)):
            if visible[i] is None or visible[j] is None:
                continue
            try:
                d = mutual_reprojection_error(hyps[i].projection, hyps[j].projection,
                                              visible[i], visible[j])
            except IncomparableError:
                continue
            deltas[(i, j)] = d
            if d < threshold:
                edges.append((i, j))
    return CompatibilityGraph(hyps, tuple(edges), deltas, threshold)


@dataclass(frozen=True)
class Selection:
    """Outcome of the plausibility check."""

    success: bool
    index: int | None
    hypothesis: PoseHypothesis | None
    component: tuple[int, ...]


def select_pose(graph: CompatibilityGraph, min_size: int = 4) -> Selection:
    """Accept when the largest component has at least ``min_size`` nodes.

    Among equally large components the first discovered (lowest index) wins.
    The returned member has the largest consensus; ties go to the lower RMSE,
    then the lower index.
    """
    comps = graph.components()
    if not comps:
        return Selection(False, None, None, ())
    comp = max(comps, key=len)  # max keeps the first of equal sizes
    if len(comp) < min_size:
        return Selection(False, None, None, tuple(comp))
    best = min(comp, key=lambda i: (-len(graph.nodes[i].inliers), graph.nodes[i].rmse, i))
    return Selection(True, best, graph.nodes[best], tuple(comp))
