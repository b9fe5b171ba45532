"""On-disk formats binding the pipeline together.

Formats (all little-endian, SI units, pixel units as declared):
  - labeled point clouds and edge maps: binary PLY with properties
    x, y, z (float64, m), class (uint8), support (uint16); ignore class 255;
    local datum and voxel size carried as header comments
  - segmentation masks: 8-bit single-channel PNG, pixel value = class id
  - cameras: key = value intrinsics files; views/frames manifests as CSV with
    row-major world-to-camera rotations
  - localization results and frame errors: JSONL, one object per line
  - run manifests: JSON with command, config snapshot, input hashes, version

Every reader raises InputError with the offending path (and line, when the
format has lines) instead of leaking parse exceptions.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from ._version import __version__
from .classes import CLASS_NAMES, IGNORE_LABEL, NUM_CLASSES
from .crossmodal import ConfusionMatrix, CorrespondenceSet, Homography
from .evaluation import FrameError
from .geometry import CameraIntrinsics, RigidPose, ViewGeometry
from .semantic_map import (ColoredPointCloud, LabeledView, SemanticPointCloud,
                           VoxelEdgeMap)
from .solver import Frame, LocalizationResult, StageTrace


class InputError(Exception):
    """Malformed input; message carries path and line for direct diagnosis."""

    def __init__(self, path, message: str, line: int | None = None):
        self.path = str(path)
        self.line = line
        loc = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{loc}: {message}")


# ---------------------------------------------------------------------------
# point clouds (binary PLY)

_PLY_TO_NUMPY = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}
_NUMPY_TO_PLY = {"<f8": "double", "u1": "uchar", "<u2": "ushort"}


def _write_ply(path, columns: list[tuple[str, np.ndarray]], comments: list[str]) -> None:
    n = columns[0][1].shape[0]
    dtype = []
    for name, arr in columns:
        code = arr.dtype.str.lstrip("|=")
        if arr.dtype == np.float64:
            code = "<f8"
        elif arr.dtype == np.uint8:
            code = "u1"
        elif arr.dtype == np.uint16:
            code = "<u2"
        dtype.append((name, code))
    rec = np.empty(n, dtype=dtype)
    for name, arr in columns:
        rec[name] = arr
    header = ["ply", "format binary_little_endian 1.0"]
    header += [f"comment {c}" for c in comments]
    header.append(f"element vertex {n}")
    header += [f"property {_NUMPY_TO_PLY[code]} {name}" for name, code in dtype]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rec.tobytes())


def _read_ply(path) -> tuple[np.ndarray, list[str]]:
    data = Path(path).read_bytes()
    marker = b"end_header\n"
    end = data.find(marker)
    if end < 0:
        raise InputError(path, "not a PLY file (no end_header)")
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    if not lines or lines[0].strip() != "ply":
        raise InputError(path, "not a PLY file (missing magic)", line=1)
    comments: list[str] = []
    fields: list[tuple[str, str]] = []
    count = None
    for line_no, raw in enumerate(lines[1:], start=2):
        tok = raw.strip().split()
        if not tok:
            continue
        kw = tok[0]
        if kw == "format":
            if tok[1:] != ["binary_little_endian", "1.0"]:
                raise InputError(path, f"unsupported format {' '.join(tok[1:])!r} "
                                 "(need binary_little_endian 1.0)", line=line_no)
        elif kw == "comment":
            comments.append(raw.strip()[len("comment"):].strip())
        elif kw == "element":
            if count is not None:
                raise InputError(path, "multiple elements unsupported", line=line_no)
            if len(tok) != 3 or tok[1] != "vertex":
                raise InputError(path, f"unsupported element {raw.strip()!r}", line=line_no)
            try:
                count = int(tok[2])
            except ValueError:
                raise InputError(path, f"bad vertex count {tok[2]!r}", line=line_no)
        elif kw == "property":
            if len(tok) != 3 or tok[1] == "list":
                raise InputError(path, f"unsupported property {raw.strip()!r}", line=line_no)
            if tok[1] not in _PLY_TO_NUMPY:
                raise InputError(path, f"unknown property type {tok[1]!r}", line=line_no)
            fields.append((tok[2], _PLY_TO_NUMPY[tok[1]]))
        elif kw == "obj_info":
            continue
        else:
            raise InputError(path, f"unknown header keyword {kw!r}", line=line_no)
    if count is None:
        raise InputError(path, "no vertex element declared")
    if not fields:
        raise InputError(path, "vertex element has no properties")
    names = [n for n, _ in fields]
    if len(set(names)) != len(names):
        raise InputError(path, "duplicate property names")
    dtype = np.dtype(fields)
    offset = end + len(marker)
    if len(data) - offset < count * dtype.itemsize:
        raise InputError(path, f"truncated payload: need {count * dtype.itemsize} "
                         f"bytes, have {len(data) - offset}")
    return np.frombuffer(data, dtype=dtype, count=count, offset=offset), comments


def _datum_comment(datum) -> str:
    return "datum {!r} {!r} {!r}".format(*(float(v) for v in datum))


def _parse_datum(comments: list[str], path) -> tuple[float, float, float]:
    for c in comments:
        tok = c.split()
        if tok and tok[0] == "datum":
            if len(tok) != 4:
                raise InputError(path, f"malformed datum comment {c!r}")
            try:
                return tuple(float(v) for v in tok[1:])
            except ValueError:
                raise InputError(path, f"malformed datum comment {c!r}")
    return (0.0, 0.0, 0.0)


def write_labeled_ply(path, cloud: SemanticPointCloud,
                      extra_comments: list[str] | None = None) -> None:
    comments = [_datum_comment(cloud.datum)] + list(extra_comments or [])
    _write_ply(path, [
        ("x", cloud.points[:, 0]), ("y", cloud.points[:, 1]), ("z", cloud.points[:, 2]),
        ("class", cloud.labels), ("support", cloud.support),
    ], comments)


def read_labeled_ply(path) -> SemanticPointCloud:
    rec, comments = _read_ply(path)
    for req in ("x", "y", "z", "class", "support"):
        if req not in rec.dtype.names:
            raise InputError(path, f"missing vertex property {req!r}")
    points = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    try:
        return SemanticPointCloud(
            points=points,
            labels=rec["class"].astype(np.uint8),
            support=rec["support"].astype(np.uint16),
            datum=_parse_datum(comments, path))
    except ValueError as exc:
        raise InputError(path, str(exc))


def read_cloud_ply(path) -> ColoredPointCloud:
    """Read a reconstruction cloud: x, y, z required, colors optional."""
    rec, _ = _read_ply(path)
    for req in ("x", "y", "z"):
        if req not in rec.dtype.names:
            raise InputError(path, f"missing vertex property {req!r}")
    points = np.column_stack([rec["x"], rec["y"], rec["z"]]).astype(np.float64)
    if all(c in rec.dtype.names for c in ("red", "green", "blue")):
        colors = np.column_stack([rec["red"], rec["green"], rec["blue"]]).astype(np.uint8)
    else:
        colors = np.zeros((points.shape[0], 3), dtype=np.uint8)
    return ColoredPointCloud(points=points, colors=colors)


def write_cloud_ply(path, cloud: ColoredPointCloud) -> None:
    _write_ply(path, [
        ("x", cloud.points[:, 0]), ("y", cloud.points[:, 1]), ("z", cloud.points[:, 2]),
        ("red", cloud.colors[:, 0]), ("green", cloud.colors[:, 1]),
        ("blue", cloud.colors[:, 2]),
    ], comments=[])


def write_edge_map_ply(path, edge_map: VoxelEdgeMap) -> None:
    cloud = edge_map.to_point_cloud()
    write_labeled_ply(path, cloud,
                      extra_comments=[f"voxel_size {float(edge_map.voxel_size)!r}"])


def read_edge_map_ply(path) -> VoxelEdgeMap:
    cloud = read_labeled_ply(path)
    voxel_size = None
    rec, comments = _read_ply(path)
    for c in comments:
        tok = c.split()
        if tok and tok[0] == "voxel_size":
            try:
                voxel_size = float(tok[1])
            except (IndexError, ValueError):
                raise InputError(path, f"malformed voxel_size comment {c!r}")
    if voxel_size is None:
        raise InputError(path, "edge map file lacks a voxel_size comment")
    indices = np.round(cloud.points / voxel_size - 0.5).astype(np.int64)
    centers = (indices.astype(np.float64) + 0.5) * voxel_size
    if not np.allclose(centers, cloud.points, rtol=0.0, atol=1e-6 * voxel_size):
        raise InputError(path, "edge map points are not voxel centers")
    return VoxelEdgeMap(voxel_size=voxel_size, indices=indices, labels=cloud.labels)


# ---------------------------------------------------------------------------
# segmentation masks (8-bit PNG)

def write_mask_png(path, mask: np.ndarray) -> None:
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    if m.ndim != 2:
        raise ValueError("mask must be a 2-D array")
    Image.fromarray(m, mode="L").save(path, format="PNG")


def read_mask_png(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise InputError(path, f"mask must be 8-bit single-channel PNG, "
                                 f"got mode {img.mode!r}")
            arr = np.asarray(img, dtype=np.uint8)
    except FileNotFoundError:
        raise InputError(path, "file not found")
    except Image.UnidentifiedImageError:
        raise InputError(path, "not a readable image")
    bad = (arr >= NUM_CLASSES) & (arr != IGNORE_LABEL)
    if np.any(bad):
        raise InputError(path, f"mask holds invalid class id {int(arr[bad][0])}")
    return arr


# ---------------------------------------------------------------------------
# key = value configs

def read_config(path) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise InputError(path, "file not found")
    for line_no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise InputError(path, f"expected 'key = value', got {raw!r}", line=line_no)
        key, value = s.split("=", 1)
        key = key.strip()
        if not key:
            raise InputError(path, "empty key", line=line_no)
        if key in out:
            raise InputError(path, f"duplicate key {key!r}", line=line_no)
        out[key] = value.strip()
    return out


def write_config(path, mapping: dict) -> None:
    lines = [f"{k} = {v}" for k, v in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n")


_REQUIRED = object()


def _coerce(cfg: dict, path, key: str, conv, default=_REQUIRED):
    if key not in cfg:
        if default is _REQUIRED:
            raise InputError(path, f"missing required key {key!r}")
        return default
    try:
        return conv(cfg[key])
    except (TypeError, ValueError):
        raise InputError(path, f"key {key!r}: cannot parse {cfg[key]!r}")


def _check_keys(cfg: dict, path, allowed) -> None:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise InputError(path, f"unknown keys: {', '.join(unknown)}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _pair(text: str) -> tuple[float, float]:
    vals = _floats(text)
    if len(vals) != 2:
        raise ValueError("need exactly two values")
    return vals


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_intrinsics(path) -> CameraIntrinsics:
    cfg = read_config(path)
    _check_keys(cfg, path, ("fx", "fy", "cx", "cy", "width", "height",
                            "k1", "k2", "k3", "p1", "p2"))
    dist = tuple(_coerce(cfg, path, k, float, 0.0) for k in ("k1", "k2", "k3", "p1", "p2"))
    try:
        return CameraIntrinsics(
            fx=_coerce(cfg, path, "fx", float), fy=_coerce(cfg, path, "fy", float),
            cx=_coerce(cfg, path, "cx", float), cy=_coerce(cfg, path, "cy", float),
            width=_coerce(cfg, path, "width", int),
            height=_coerce(cfg, path, "height", int),
            dist=dist)
    except ValueError as exc:
        raise InputError(path, str(exc))


def write_intrinsics(path, intr: CameraIntrinsics) -> None:
    mapping = {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy,
               "width": intr.width, "height": intr.height}
    for name, value in zip(("k1", "k2", "k3", "p1", "p2"), intr.dist):
        if value != 0.0:
            mapping[name] = value
    write_config(path, mapping)


# ---------------------------------------------------------------------------
# views and frames manifests (CSV)

_ROT_COLS = ("r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33")
VIEW_COLUMNS = ("frame_id", "image", "cx", "cy", "cz") + _ROT_COLS + ("height", "intrinsics")
FRAME_COLUMNS = ("frame_id", "image") + _ROT_COLS + ("height", "intrinsics",
                                                     "prior_x", "prior_y")


@dataclasses.dataclass
class ViewRecord:
    """One mapping-view row; paths already resolved against the manifest."""

    frame_id: str
    image: Path
    camera_center: tuple[float, float, float]
    rotation: np.ndarray  # world -> camera
    height: float
    intrinsics: Path
    source: Path | None = None
    line: int | None = None


@dataclasses.dataclass
class FrameRecord:
    """One localization-frame row; prior is the nominal planar position."""

    frame_id: str
    image: Path
    rotation: np.ndarray  # world -> camera
    height: float
    intrinsics: Path
    prior: tuple[float, float]
    source: Path | None = None
    line: int | None = None


def _read_csv_rows(path, columns) -> list[tuple[int, list[str]]]:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise InputError(path, "file not found")
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise InputError(path, "empty file", line=1)
    header = [c.strip() for c in rows[0]]
    if header != list(columns):
        raise InputError(path, f"header must be {','.join(columns)}", line=1)
    out = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(columns):
            raise InputError(path, f"expected {len(columns)} fields, got {len(row)}",
                             line=line_no)
        out.append((line_no, [c.strip() for c in row]))
    return out


def _parse_float(value: str, path, line_no: int, what: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise InputError(path, f"{what}: cannot parse {value!r}", line=line_no)


def _parse_rotation(cells: list[str], path, line_no: int, frame_id: str) -> np.ndarray:
    vals = [_parse_float(c, path, line_no, f"frame {frame_id!r} rotation") for c in cells]
    r = np.array(vals, dtype=np.float64).reshape(3, 3)
    rt = r.T @ r
    if np.abs(rt - np.eye(3)).max() > 1e-6 or np.linalg.det(r) < 0:
        raise InputError(path, f"frame {frame_id!r}: rotation is not a proper "
                         "rotation matrix", line=line_no)
    return r


def read_views_manifest(path) -> list[ViewRecord]:
    base = Path(path).parent
    records = []
    seen = set()
    for line_no, row in _read_csv_rows(path, VIEW_COLUMNS):
        frame_id = row[0]
        if not frame_id:
            raise InputError(path, "empty frame_id", line=line_no)
        if frame_id in seen:
            raise InputError(path, f"duplicate frame_id {frame_id!r}", line=line_no)
        seen.add(frame_id)
        center = tuple(_parse_float(c, path, line_no, f"frame {frame_id!r} center")
                       for c in row[2:5])
        rot = _parse_rotation(row[5:14], path, line_no, frame_id)
        height = _parse_float(row[14], path, line_no, f"frame {frame_id!r} height")
        records.append(ViewRecord(
            frame_id=frame_id, image=base / row[1], camera_center=center,
            rotation=rot, height=height, intrinsics=base / row[15],
            source=Path(path), line=line_no))
    if not records:
        raise InputError(path, "manifest lists no views")
    return records


def write_views_manifest(path, records: list[ViewRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(VIEW_COLUMNS)
        for r in records:
            w.writerow([r.frame_id, str(r.image),
                        *(repr(float(v)) for v in r.camera_center),
                        *(repr(float(v)) for v in r.rotation.reshape(-1)),
                        repr(float(r.height)), str(r.intrinsics)])


def read_frames_manifest(path) -> list[FrameRecord]:
    base = Path(path).parent
    records = []
    seen = set()
    for line_no, row in _read_csv_rows(path, FRAME_COLUMNS):
        frame_id = row[0]
        if not frame_id:
            raise InputError(path, "empty frame_id", line=line_no)
        if frame_id in seen:
            raise InputError(path, f"duplicate frame_id {frame_id!r}", line=line_no)
        seen.add(frame_id)
        rot = _parse_rotation(row[2:11], path, line_no, frame_id)
        height = _parse_float(row[11], path, line_no, f"frame {frame_id!r} height")
        prior = (_parse_float(row[13], path, line_no, f"frame {frame_id!r} prior_x"),
                 _parse_float(row[14], path, line_no, f"frame {frame_id!r} prior_y"))
        records.append(FrameRecord(
            frame_id=frame_id, image=base / row[1], rotation=rot, height=height,
            intrinsics=base / row[12], prior=prior, source=Path(path), line=line_no))
    if not records:
        raise InputError(path, "manifest lists no frames")
    return records


def write_frames_manifest(path, records: list[FrameRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(FRAME_COLUMNS)
        for r in records:
            w.writerow([r.frame_id, str(r.image),
                        *(repr(float(v)) for v in r.rotation.reshape(-1)),
                        repr(float(r.height)), str(r.intrinsics),
                        repr(float(r.prior[0])), repr(float(r.prior[1]))])


def _intrinsics_cache(paths) -> dict[Path, CameraIntrinsics]:
    cache: dict[Path, CameraIntrinsics] = {}
    for p in paths:
        p = Path(p)
        if p not in cache:
            cache[p] = read_intrinsics(p)
    return cache


def load_labeled_views(records: list[ViewRecord]) -> list[LabeledView]:
    """Materialize manifest rows: read masks and intrinsics, build cameras."""
    cache = _intrinsics_cache(r.intrinsics for r in records)
    views = []
    for r in records:
        intr = cache[Path(r.intrinsics)]
        mask = read_mask_png(r.image)
        center = np.array(r.camera_center, dtype=np.float64)
        try:
            view = ViewGeometry.from_world_to_camera(r.rotation, r.height, intr)
            pose = RigidPose(rotation=r.rotation, translation=-r.rotation @ center)
            views.append(LabeledView(mask=mask, view=view, pose=pose))
        except ValueError as exc:
            raise InputError(r.source or r.image, f"frame {r.frame_id!r}: {exc}",
                             line=r.line)
    return views


def load_frames(records: list[FrameRecord]) -> list[Frame]:
    cache = _intrinsics_cache(r.intrinsics for r in records)
    frames = []
    for r in records:
        intr = cache[Path(r.intrinsics)]
        mask = read_mask_png(r.image)
        try:
            view = ViewGeometry.from_world_to_camera(r.rotation, r.height, intr)
            if mask.shape != (intr.height, intr.width):
                raise ValueError(f"mask shape {mask.shape} does not match "
                                 f"intrinsics ({intr.height}, {intr.width})")
            frames.append(Frame(frame_id=r.frame_id, mask=mask, view=view,
                                prior=r.prior))
        except ValueError as exc:
            raise InputError(r.source or r.image, f"frame {r.frame_id!r}: {exc}",
                             line=r.line)
    return frames


# ---------------------------------------------------------------------------
# truth and correspondence tables (CSV)

TRUTH_COLUMNS = ("frame_id", "tx", "ty")


def read_truth_csv(path) -> dict[str, tuple[float, float]]:
    out: dict[str, tuple[float, float]] = {}
    for line_no, row in _read_csv_rows(path, TRUTH_COLUMNS):
        frame_id = row[0]
        if frame_id in out:
            raise InputError(path, f"duplicate frame_id {frame_id!r}", line=line_no)
        out[frame_id] = (_parse_float(row[1], path, line_no, "tx"),
                         _parse_float(row[2], path, line_no, "ty"))
    return out


def write_truth_csv(path, truth: dict[str, tuple[float, float]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRUTH_COLUMNS)
        for frame_id, (tx, ty) in truth.items():
            w.writerow([frame_id, repr(float(tx)), repr(float(ty))])


CORRESPONDENCE_COLUMNS = ("u_src", "v_src", "u_dst", "v_dst")


def read_correspondences_csv(path) -> CorrespondenceSet:
    src, dst = [], []
    for line_no, row in _read_csv_rows(path, CORRESPONDENCE_COLUMNS):
        vals = [_parse_float(c, path, line_no, name)
                for name, c in zip(CORRESPONDENCE_COLUMNS, row)]
        src.append(vals[:2])
        dst.append(vals[2:])
    try:
        return CorrespondenceSet(src=np.array(src), dst=np.array(dst))
    except ValueError as exc:
        raise InputError(path, str(exc))


def write_correspondences_csv(path, corr: CorrespondenceSet) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CORRESPONDENCE_COLUMNS)
        for s, d in zip(corr.src, corr.dst):
            w.writerow([repr(float(s[0])), repr(float(s[1])),
                        repr(float(d[0])), repr(float(d[1]))])


# ---------------------------------------------------------------------------
# confusion matrices (CSV with class-name header)

def _class_names(k: int) -> list[str]:
    return [CLASS_NAMES[i] if i < len(CLASS_NAMES) else f"class_{i}" for i in range(k)]


def write_confusion_csv(path, conf: ConfusionMatrix) -> None:
    k = conf.num_classes
    names = _class_names(k)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true_class"] + names)
        for i in range(k):
            w.writerow([names[i]] + [repr(float(v)) for v in conf.matrix[i]])


def read_confusion_csv(path) -> ConfusionMatrix:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise InputError(path, "file not found")
    rows = list(csv.reader(text.splitlines()))
    if not rows or not rows[0] or rows[0][0].strip() != "true_class":
        raise InputError(path, "header must start with true_class", line=1)
    k = len(rows[0]) - 1
    if k < 1:
        raise InputError(path, "no class columns", line=1)
    matrix = np.zeros((k, k))
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if len(body) != k:
        raise InputError(path, f"need {k} rows for {k} classes, got {len(body)}")
    for i, row in enumerate(body):
        line_no = i + 2
        if len(row) != k + 1:
            raise InputError(path, f"expected {k + 1} fields, got {len(row)}", line=line_no)
        matrix[i] = [_parse_float(c, path, line_no, "confusion entry") for c in row[1:]]
    try:
        return ConfusionMatrix(matrix=matrix)
    except ValueError as exc:
        raise InputError(path, str(exc))


# ---------------------------------------------------------------------------
# homographies (JSON)

def write_homography_json(path, h: Homography) -> None:
    Path(path).write_text(json.dumps({"matrix": h.matrix.tolist()}, indent=2) + "\n")


def read_homography_json(path) -> Homography:
    try:
        obj = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InputError(path, "file not found")
    except json.JSONDecodeError as exc:
        raise InputError(path, f"invalid JSON: {exc.msg}", line=exc.lineno)
    try:
        matrix = np.array(obj["matrix"], dtype=np.float64)
    except (KeyError, TypeError, ValueError):
        raise InputError(path, "expected an object with a 3x3 'matrix' field")
    try:
        return Homography(matrix=matrix)
    except ValueError as exc:
        raise InputError(path, str(exc))


# ---------------------------------------------------------------------------
# localization results and frame errors (JSONL)

def result_to_dict(r: LocalizationResult) -> dict:
    return {
        "frame_id": r.frame_id,
        "t_star": [r.t_star.tx, r.t_star.ty],
        "loss": r.loss,
        "edge_count": r.edge_count,
        "gated": r.gated,
        "gate_reason": r.gate_reason,
        "wall_time_s": r.wall_time_s,
        "error": r.error,
        "trace": [{"spacing": s.spacing, "t": [s.t[0], s.t[1]], "loss": s.loss,
                   "candidates": s.candidates} for s in r.trace],
    }


def _result_from_dict(obj: dict) -> LocalizationResult:
    from .geometry import PlanarTranslation
    trace = [StageTrace(spacing=float(s["spacing"]), t=(float(s["t"][0]), float(s["t"][1])),
                        loss=float(s["loss"]), candidates=int(s["candidates"]))
             for s in obj.get("trace", [])]
    return LocalizationResult(
        t_star=PlanarTranslation(float(obj["t_star"][0]), float(obj["t_star"][1])),
        loss=float(obj["loss"]),
        edge_count=int(obj["edge_count"]),
        gated=bool(obj["gated"]),
        gate_reason=obj.get("gate_reason"),
        trace=trace,
        wall_time_s=float(obj.get("wall_time_s", 0.0)),
        frame_id=obj.get("frame_id"),
        error=obj.get("error"),
    )


def write_results_jsonl(path, results: list[LocalizationResult]) -> None:
    with open(path, "w") as f:
        for r in results:
            f.write(json.dumps(result_to_dict(r)) + "\n")


def read_results_jsonl(path) -> list[LocalizationResult]:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise InputError(path, "file not found")
    results = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            results.append(_result_from_dict(obj))
        except (json.JSONDecodeError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise InputError(path, f"bad result record: {exc}", line=line_no)
    return results


def write_frame_errors_jsonl(path, errors: list[FrameError]) -> None:
    with open(path, "w") as f:
        for e in errors:
            f.write(json.dumps({
                "frame_id": e.frame_id, "estimated": list(e.estimated),
                "truth": list(e.truth), "error": list(e.error),
                "edge_count": e.edge_count, "gated": e.gated}) + "\n")


def read_frame_errors_jsonl(path) -> list[FrameError]:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise InputError(path, "file not found")
    errors = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
            errors.append(FrameError(
                frame_id=str(obj["frame_id"]),
                estimated=(float(obj["estimated"][0]), float(obj["estimated"][1])),
                truth=(float(obj["truth"][0]), float(obj["truth"][1])),
                edge_count=int(obj["edge_count"]),
                gated=bool(obj.get("gated", False))))
        except (json.JSONDecodeError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise InputError(path, f"bad frame-error record: {exc}", line=line_no)
    return errors


# ---------------------------------------------------------------------------
# run manifests

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_manifest(path, command: list[str], config: dict, inputs: list,
                   started: str, finished: str | None = None) -> None:
    """Provenance record emitted next to every output artifact."""
    manifest = {
        "command": list(command),
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "version": __version__,
        "started": started,
        "finished": finished or utc_now(),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# loss / search / scene / corruption configs

def read_loss_config(path, confusion: ConfusionMatrix | None = None):
    from .alignment import LossConfig
    cfg = read_config(path)
    _check_keys(cfg, path, ("delta", "d_max", "lambda_forward", "lambda_reverse",
                            "reverse_weighting", "confusion"))
    if confusion is None and "confusion" in cfg:
        confusion = read_confusion_csv(Path(path).parent / cfg["confusion"])
    try:
        return LossConfig(
            delta=_coerce(cfg, path, "delta", float, 2.0),
            d_max=_coerce(cfg, path, "d_max", float, 5.0),
            lambda_forward=_coerce(cfg, path, "lambda_forward", float, 1.0),
            lambda_reverse=_coerce(cfg, path, "lambda_reverse", float, 1.0),
            confusion=confusion,
            reverse_weighting=_coerce(cfg, path, "reverse_weighting", str, "posterior"))
    except ValueError as exc:
        raise InputError(path, str(exc))


def read_search_config(path):
    from .solver import SearchConfig
    cfg = read_config(path)
    _check_keys(cfg, path, ("region_radius", "spacings", "refine_halfwidth",
                            "gate_threshold"))
    try:
        return SearchConfig(
            region_radius=_coerce(cfg, path, "region_radius", float, 30.0),
            spacings=_coerce(cfg, path, "spacings", _floats, (4.0, 1.0, 0.25)),
            refine_halfwidth=_coerce(cfg, path, "refine_halfwidth", int, 2),
            gate_threshold=_coerce(cfg, path, "gate_threshold", int, 8000))
    except ValueError as exc:
        raise InputError(path, str(exc))


def read_scene_spec(path):
    from .synth import SceneSpec
    cfg = read_config(path)
    allowed = {f.name for f in dataclasses.fields(SceneSpec)}
    _check_keys(cfg, path, allowed)
    kwargs = {}
    convs = {
        "seed": int, "extent": float, "density": float, "ground_class": int,
        "n_roads": int, "road_width": _pair, "n_discs": int, "disc_radius": _pair,
        "disc_classes": _ints, "n_buildings": int, "building_size": _pair,
        "building_height": _pair, "altitude": _pair,
    }
    for key, conv in convs.items():
        if key in cfg:
            kwargs[key] = _coerce(cfg, path, key, conv)
    if "building_fraction" in cfg:
        raw = cfg["building_fraction"].lower()
        kwargs["building_fraction"] = None if raw == "none" else _coerce(
            cfg, path, "building_fraction", float)
    try:
        return SceneSpec(**kwargs)
    except ValueError as exc:
        raise InputError(path, str(exc))


def read_corruption_spec(path):
    from .synth import CorruptionSpec
    cfg = read_config(path)
    _check_keys(cfg, path, ("flip_rate", "confusion", "boundary_jitter", "dropout"))
    confusion = None
    if "confusion" in cfg:
        confusion = read_confusion_csv(Path(path).parent / cfg["confusion"])
    try:
        return CorruptionSpec(
            flip_rate=_coerce(cfg, path, "flip_rate", float, 0.0),
            confusion=confusion,
            boundary_jitter=_coerce(cfg, path, "boundary_jitter", float, 0.0),
            dropout=_coerce(cfg, path, "dropout", float, 0.0))
    except ValueError as exc:
        raise InputError(path, str(exc))
