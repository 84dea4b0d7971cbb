"""Plain-text and PGM file formats for meshes, rasters, cameras, configs and reports."""

from __future__ import annotations

import csv
import dataclasses
import io as _io
from pathlib import Path

import numpy as np

from .asg import AsgConfig
from .flow import Correspondences, FlowParams
from .pipeline import RegistrationConfig, RegistrationReport
from .pose import RansacParams
from .types import CameraIntrinsics, CameraPose, TriangleMesh

__all__ = [
    "FormatError",
    "read_mesh",
    "write_ply",
    "write_obj",
    "read_pgm",
    "write_pgm",
    "to_byte_image",
    "read_raster",
    "write_raster",
    "read_camera",
    "write_camera",
    "read_config",
    "write_correspondences",
    "write_edges",
    "format_report",
    "edge_overlay",
]


class FormatError(ValueError):
    """A file does not follow the expected format."""


# ---------------------------------------------------------------- meshes


def _ply(text: str) -> TriangleMesh:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError("missing 'ply' magic")
    elements, i = [], 1
    while i < len(lines):
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise FormatError(f"only ASCII PLY is supported, got {tok[1]}")
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise FormatError("property before any element")
            elements[-1][2].append(tok[-1] if tok[1] != "list" else ("list", tok[-1]))
        elif tok[0] == "end_header":
            break
    else:
        raise FormatError("missing end_header")
    body = [ln.split() for ln in lines[i:] if ln.strip()]
    verts = faces = None
    pos = 0
    for name, count, props in elements:
        rows = body[pos:pos + count]
        if len(rows) < count:
            raise FormatError(f"truncated {name} data")
        pos += count
        if name == "vertex":
            try:
                cols = [props.index(a) for a in ("x", "y", "z")]
            except ValueError as exc:
                raise FormatError("vertex element lacks x, y or z") from exc
            verts = np.array([[float(r[c]) for c in cols] for r in rows]).reshape(-1, 3)
        elif name == "face":
            fl = []
            for r in rows:
                k = int(r[0])
                if k != 3:
                    raise FormatError(f"face with {k} vertices; only triangles are supported")
                fl.append([int(v) for v in r[1:4]])
            faces = np.array(fl, dtype=np.int64).reshape(-1, 3)
    if verts is None or faces is None:
        raise FormatError("PLY needs vertex and face elements")
    return TriangleMesh(verts, faces)


def _obj(text: str) -> TriangleMesh:
    verts, faces = [], []
    for n, line in enumerate(text.splitlines(), 1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        if tok[0] == "v":
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            idx = [int(t.split("/")[0]) for t in tok[1:]]
            if len(idx) != 3:
                raise FormatError(f"line {n}: face with {len(idx)} vertices; "
                                  "only triangles are supported")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    if not verts or not faces:
        raise FormatError("OBJ needs vertices and faces")
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64))


def read_mesh(path) -> TriangleMesh:
    """ASCII PLY or OBJ triangle mesh, chosen by file extension."""
    path = Path(path)
    text = path.read_text()
    ext = path.suffix.lower()
    if ext == ".ply":
        return _ply(text)
    if ext == ".obj":
        return _obj(text)
    raise FormatError(f"unsupported mesh extension {ext!r}")


def write_ply(path, mesh: TriangleMesh) -> None:
    lines = ["ply", "format ascii 1.0", f"element vertex {len(mesh.vertices)}",
             "property double x", "property double y", "property double z",
             f"element face {len(mesh.faces)}", "property list uchar int vertex_indices",
             "end_header"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def write_obj(path, mesh: TriangleMesh) -> None:
    lines = ["v " + " ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += ["f " + " ".join(str(int(i) + 1) for i in f) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- PGM


def _pgm_tokens(data: bytes, count: int):
    """First ``count`` header tokens and the offset just past them."""
    tokens, i = [], 0
    while len(tokens) < count:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated PGM header")
        tokens.append(data[i:j].decode("ascii"))
        i = j
    return tokens, i


def read_pgm(path) -> np.ndarray:
    """8- or 16-bit PGM (binary P5 or ASCII P2) as an integer array."""
    data = Path(path).read_bytes()
    (magic, w, h, maxval), off = _pgm_tokens(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise FormatError(f"bad maxval {maxval}")
    if magic == "P2":
        vals = np.array(data[off:].split()[:w * h], dtype=np.int64)
        if vals.size != w * h:
            raise FormatError("truncated PGM data")
        return vals.reshape(h, w).astype(np.uint8 if maxval < 256 else np.uint16)
    if magic != "P5":
        raise FormatError(f"not a PGM file (magic {magic!r})")
    off += 1  # single whitespace after maxval
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    need = w * h * dtype.itemsize
    if len(data) - off < need:
        raise FormatError("truncated PGM data")
    img = np.frombuffer(data, dtype=dtype, count=w * h, offset=off).reshape(h, w)
    return img.astype(np.uint8 if maxval < 256 else np.uint16)


def write_pgm(path, image: np.ndarray, bits: int = 8) -> None:
    """Binary PGM of a non-negative integer image, 8 or 16 bits."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM needs a single-channel image")
    maxval = 255 if bits == 8 else 65535
    img = np.clip(np.rint(img), 0, maxval).astype(np.uint8 if bits == 8 else ">u2")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def to_byte_image(values: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    """Scale to 0..255 over valid pixels; normal maps use (n + 1) / 2 per channel mean."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 3:
        v = ((v + 1.0) / 2.0).mean(axis=2) * 255.0
        out = v
    else:
        ok = np.isfinite(v) if valid is None else valid & np.isfinite(v)
        hi = v[ok].max() if ok.any() else 0.0
        out = np.where(ok, v / hi * 255.0 if hi > 0 else 0.0, 0.0)
    if valid is not None:
        out = np.where(valid, out, 0.0)
    return np.clip(out, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- float rasters


def write_raster(path, values: np.ndarray, valid: np.ndarray | None = None) -> None:
    """Text raster: header ``width height [channels]`` then one line per row.

    Invalid pixels are written as ``nan``.
    """
    v = np.array(values, dtype=float)
    H, W = v.shape[:2]
    C = 1 if v.ndim == 2 else v.shape[2]
    if valid is not None:
        v[~np.asarray(valid, dtype=bool)] = np.nan
    buf = _io.StringIO()
    buf.write(f"{W} {H}" + (f" {C}" if v.ndim == 3 else "") + "\n")
    np.savetxt(buf, v.reshape(H, W * C), fmt="%.17g")
    Path(path).write_text(buf.getvalue())


def read_raster(path) -> np.ndarray:
    """Inverse of :func:`write_raster`; ``nan`` marks invalid pixels."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) not in (2, 3):
            raise FormatError("raster header must be 'width height [channels]'")
        W, H = int(header[0]), int(header[1])
        C = int(header[2]) if len(header) == 3 else None
        vals = np.array(fh.read().split(), dtype=float)
    n = W * H * (C or 1)
    if vals.size != n:
        raise FormatError(f"expected {n} values, found {vals.size}")
    return vals.reshape(H, W) if C is None else vals.reshape(H, W, C)


# ---------------------------------------------------------------- cameras


def _keyvalues(text: str) -> dict[str, list[str]]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":"):
            if sep in line:
                key, val = line.split(sep, 1)
                break
        else:
            key, _, val = line.partition(" ")
        key = key.strip()
        if not key:
            raise FormatError(f"line {n}: missing key")
        out[key] = val.split()
    return out


def read_camera(path) -> tuple[CameraPose | None, CameraIntrinsics | None]:
    """Pose and/or intrinsics from a key-value file.

    Pose fields: ``rotation`` (9 floats, row-major) and ``translation``.
    Intrinsics fields: ``fx fy cx cy width height`` and optional ``skew``.
    Either half may be absent and comes back as None.
    """
    kv = _keyvalues(Path(path).read_text())
    pose = intr = None
    try:
        if "rotation" in kv or "translation" in kv:
            R = np.array(kv["rotation"], dtype=float)
            t = np.array(kv["translation"], dtype=float)
            if R.size != 9 or t.size != 3:
                raise FormatError("rotation needs 9 values and translation 3")
            pose = CameraPose.from_rt(R.reshape(3, 3), t)
        if "fx" in kv:
            intr = CameraIntrinsics(float(kv["fx"][0]), float(kv["fy"][0]), float(kv["cx"][0]),
                                    float(kv["cy"][0]), int(kv["width"][0]), int(kv["height"][0]),
                                    float(kv.get("skew", ["0"])[0]))
    except KeyError as exc:
        raise FormatError(f"missing field {exc.args[0]!r}") from exc
    return pose, intr


def write_camera(path, pose: CameraPose | None = None, K: CameraIntrinsics | None = None,
                 extra: dict | None = None) -> None:
    Path(path).write_text(format_camera(pose, K, extra))


def format_camera(pose: CameraPose | None = None, K: CameraIntrinsics | None = None,
                  extra: dict | None = None) -> str:
    lines = []
    if pose is not None:
        lines.append("rotation = " + " ".join(repr(float(v)) for v in pose.rotation.ravel()))
        lines.append("translation = " + " ".join(repr(float(v)) for v in pose.translation))
    if K is not None:
        for name in ("fx", "fy", "cx", "cy", "skew"):
            lines.append(f"{name} = {getattr(K, name)!r}")
        lines += [f"width = {K.width}", f"height = {K.height}"]
    for key, val in (extra or {}).items():
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- config


def _scalar(text: str):
    low = text.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


_SECTIONS = {"asg": "asg", "flow": "flow", "ransac": "ransac"}
_VERIFY = {"stride": "verify_stride", "min_component": "min_component"}


def read_config(path, base: RegistrationConfig | None = None) -> RegistrationConfig:
    """Registration config from ``section.key = value`` lines.

    Sections are ``asg``, ``flow``, ``ransac``, ``verify`` and ``pipeline``;
    keys are the field names of the matching settings objects.
    """
    cfg = base or RegistrationConfig()
    blocks = {"asg": {}, "flow": {}, "ransac": {}, "pipeline": {}}
    for key, val in _keyvalues(Path(path).read_text()).items():
        section, _, name = key.partition(".")
        value = _scalar(" ".join(val))
        if section == "verify":
            if name not in _VERIFY:
                raise FormatError(f"unknown key {key!r}")
            blocks["pipeline"][_VERIFY[name]] = value
        elif section in blocks and name:
            blocks[section][name] = value
        else:
            raise FormatError(f"unknown key {key!r}")
    try:
        asg = dataclasses.replace(cfg.asg, **blocks["asg"])
        flow = dataclasses.replace(cfg.flow, **blocks["flow"])
        ransac = dataclasses.replace(cfg.ransac, **blocks["ransac"])
        return dataclasses.replace(cfg, asg=asg, flow=flow, ransac=ransac, **blocks["pipeline"])
    except TypeError as exc:
        raise FormatError(str(exc)) from exc


# ---------------------------------------------------------------- CSV and reports


def _csv(rows, header) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def correspondences_csv(corrs: Correspondences) -> str:
    rows = [(*map(repr, map(float, p)), *map(repr, map(float, X)), int(v))
            for p, X, v in zip(corrs.pixels, corrs.points, corrs.views)]
    return _csv(rows, ("x", "y", "X", "Y", "Z", "view"))


def write_correspondences(path, corrs: Correspondences) -> None:
    Path(path).write_text(correspondences_csv(corrs))


def edges_csv(rows) -> str:
    return _csv([(i, j, repr(float(d))) for i, j, d in rows], ("i", "j", "delta"))


def write_edges(path, rows) -> None:
    Path(path).write_text(edges_csv(rows))


def format_report(report: RegistrationReport) -> str:
    """Key-value summary followed by CSV blocks for hypotheses and graph edges."""
    lines = [f"success = {str(report.success).lower()}",
             f"selected = {report.selected if report.selected is not None else 'none'}",
             "component = " + " ".join(map(str, report.component)),
             f"threshold = {report.threshold!r}"]
    for key in ("initial_delta", "final_delta"):
        val = getattr(report, key)
        if val is not None:
            lines.append(f"{key} = {val!r}")
    for stage, sec in report.timings.items():
        lines.append(f"time.{stage} = {sec:.3f}")
    for w in report.warnings:
        lines.append(f"warning = {w}")
    if report.camera is not None:
        lines.append("[final_camera]")
        lines.append(format_camera(report.camera[1], report.camera[0]).rstrip("\n"))
    lines.append("[hypotheses]")
    rows = []
    for r in report.records:
        cam = r.hypothesis.decomposed if r.hypothesis is not None else None
        c = cam[1].center if cam is not None else (np.nan,) * 3
        rows.append((r.index, r.correspondences, f"{r.consensus:.6f}", r.iterations,
                     f"{r.hypothesis.rmse:.6f}" if r.hypothesis is not None else "nan",
                     *(f"{v:.6f}" for v in r.coarse_pose.center), *(f"{v:.6f}" for v in c),
                     r.error or ""))
    lines.append(_csv(rows, ("view", "correspondences", "consensus", "iterations", "rmse",
                             "coarse_cx", "coarse_cy", "coarse_cz",
                             "refined_cx", "refined_cy", "refined_cz", "error")).rstrip("\n"))
    lines.append("[edges]")
    lines.append(edges_csv(report.edges).rstrip("\n"))
    return "\n".join(lines) + "\n"


def edge_overlay(image: np.ndarray, mesh: TriangleMesh, K: CameraIntrinsics,
                 pose: CameraPose) -> np.ndarray:
    """8-bit copy of ``image`` with the visible mesh creases and outlines in white."""
    from .raster import render

    base = to_byte_image(np.asarray(image, dtype=float))
    out = render(mesh, K, pose)
    n, v = out.normal_map.normals, out.valid
    edge = np.zeros_like(v)
    for dy, dx in ((0, 1), (1, 0)):
        a = (slice(0, n.shape[0] - dy), slice(0, n.shape[1] - dx))
        b = (slice(dy, None), slice(dx, None))
        diff = (v[a] != v[b]) | (v[a] & v[b] & (np.einsum("hwc,hwc->hw", n[a], n[b]) < 0.98))
        edge[a] |= diff
    base = base.copy()
    base[edge] = 255
    return base
