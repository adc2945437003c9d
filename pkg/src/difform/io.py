"""On-disk formats: MetaImage volumes, landmark CSV, JSON documents, PGM rasters and run manifests.

Volumes use the two-file MetaImage layout (``.mhd`` text header plus a
little-endian ``.raw`` payload) in x-fastest order. Vector fields are stored
with ``ElementNumberOfChannels = d`` and the component index varying fastest.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ValidationError
from .grid import DisplacementField, GridMeta, LabelImage, Landmark, LandmarkSet, ScalarImage

ELEMENT_TYPES = {
    "MET_FLOAT": np.dtype("<f4"),
    "MET_DOUBLE": np.dtype("<f8"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_UCHAR": np.dtype("u1"),
}
HEADER_KEYS = ("ObjectType", "NDims", "BinaryData", "BinaryDataByteOrderMSB", "DimSize", "ElementSpacing",
               "Offset", "ElementNumberOfChannels", "ElementType", "ElementDataFile")
SCHEMA_VERSION = 1


def _fmt(values) -> str:
    return " ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


# ---------------------------------------------------------------------------
# MetaImage

def write_mhd(path, data: np.ndarray, meta: GridMeta, element_type: str = "MET_FLOAT", channels: int = 1) -> Path:
    """Write ``data`` (``dims`` or ``(channels, *dims)``) as ``path`` plus a sibling ``.raw``."""
    path = Path(path)
    if path.suffix != ".mhd":
        raise ValidationError(f"{path}: MetaImage header must end in .mhd")
    if element_type not in ELEMENT_TYPES:
        raise ValidationError(f"unsupported element type {element_type!r}")
    dt = ELEMENT_TYPES[element_type]
    expect = meta.dims if channels == 1 else (channels,) + meta.dims
    if data.shape != expect:
        raise ValidationError(f"{path}: array shape {data.shape} != {expect}")
    if dt.kind in "iu":
        info = np.iinfo(dt)
        if data.min() < info.min or data.max() > info.max:
            raise ValidationError(f"{path}: values out of range for {element_type}")
    raw = path.with_suffix(".raw")
    header = {
        "ObjectType": "Image",
        "NDims": str(meta.ndim),
        "BinaryData": "True",
        "BinaryDataByteOrderMSB": "False",
        "DimSize": _fmt(meta.dims),
        "ElementSpacing": _fmt(meta.spacing),
        "Offset": _fmt(meta.origin),
        "ElementNumberOfChannels": str(channels),
        "ElementType": element_type,
        "ElementDataFile": raw.name,
    }
    text = "".join(f"{k} = {header[k]}\n" for k in HEADER_KEYS)
    # Fortran order gives x fastest for scalars and channel fastest for fields
    payload = np.asarray(data).astype(dt).ravel(order="F").tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    raw.write_bytes(payload)
    return path


def _parse_header(path: Path) -> dict:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read header ({exc.strerror})") from exc
    fields = {}
    offset = 0
    for line in blob.split(b"\n"):
        start = offset
        offset += len(line) + 1
        if not line.strip():
            continue
        try:
            text = line.decode("ascii")
        except UnicodeDecodeError:
            raise ValidationError(f"{path}: non-ASCII header byte near offset {start}") from None
        if "=" not in text:
            raise ValidationError(f"{path}: malformed header line at byte offset {start}: {text!r}")
        k, v = (s.strip() for s in text.split("=", 1))
        fields[k] = (v, start)
    for k in ("NDims", "DimSize", "ElementType", "ElementDataFile"):
        if k not in fields:
            raise ValidationError(f"{path}: missing header key {k}")
    return fields


def _numbers(path, fields, key, conv, n, default=None):
    if key not in fields:
        if default is None:
            raise ValidationError(f"{path}: missing header key {key}")
        return default
    v, off = fields[key]
    try:
        out = tuple(conv(x) for x in v.split())
    except ValueError:
        raise ValidationError(f"{path}: bad value for {key} at byte offset {off}: {v!r}") from None
    if len(out) != n:
        raise ValidationError(f"{path}: {key} at byte offset {off} has {len(out)} entries, expected {n}")
    return out


def read_mhd(path):
    """Return ``(array, meta, element_type, channels)``; array is ``dims`` or ``(channels, *dims)``."""
    path = Path(path)
    fields = _parse_header(path)
    (ndim,) = _numbers(path, fields, "NDims", int, 1)
    if ndim not in (2, 3):
        raise ValidationError(f"{path}: NDims must be 2 or 3, got {ndim}")
    dims = _numbers(path, fields, "DimSize", int, ndim)
    spacing = _numbers(path, fields, "ElementSpacing", float, ndim, (1.0,) * ndim)
    origin = _numbers(path, fields, "Offset", float, ndim, (0.0,) * ndim)
    (channels,) = _numbers(path, fields, "ElementNumberOfChannels", int, 1, (1,))
    etype, off = fields["ElementType"]
    if etype not in ELEMENT_TYPES:
        raise ValidationError(f"{path}: unsupported ElementType {etype!r} at byte offset {off}")
    if fields.get("BinaryDataByteOrderMSB", ("False", 0))[0].lower() == "true":
        raise ValidationError(f"{path}: big-endian payloads are not supported")
    raw_name, _ = fields["ElementDataFile"]
    raw = path.parent / raw_name
    try:
        payload = raw.read_bytes()
    except OSError as exc:
        raise ValidationError(f"{raw}: cannot read payload ({exc.strerror})") from exc
    dt = ELEMENT_TYPES[etype]
    n = int(np.prod(dims)) * channels
    if len(payload) != n * dt.itemsize:
        raise ValidationError(
            f"{raw}: payload has {len(payload)} bytes, header implies {n * dt.itemsize} "
            f"(mismatch from byte offset {min(len(payload), n * dt.itemsize)})")
    shape = tuple(dims) if channels == 1 else (channels,) + tuple(dims)
    arr = np.frombuffer(payload, dtype=dt).reshape(shape, order="F")
    try:
        meta = GridMeta(tuple(dims), spacing, origin)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return arr, meta, etype, channels


def write_image(path, img: ScalarImage, element_type: str = "MET_FLOAT"):
    return write_mhd(path, img.data, img.meta, element_type)


def read_image(path) -> ScalarImage:
    arr, meta, _, channels = read_mhd(path)
    if channels != 1:
        raise ValidationError(f"{path}: expected a scalar image, found {channels} channels")
    try:
        return ScalarImage(meta, arr.astype(np.float64))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_labels(path, lab: LabelImage, element_type: str = "MET_SHORT"):
    if element_type not in ("MET_SHORT", "MET_UCHAR"):
        raise ValidationError("label maps must be stored as MET_SHORT or MET_UCHAR")
    return write_mhd(path, lab.data, lab.meta, element_type)


def read_labels(path) -> LabelImage:
    arr, meta, etype, channels = read_mhd(path)
    if channels != 1 or etype not in ("MET_SHORT", "MET_UCHAR"):
        raise ValidationError(f"{path}: label maps must be single-channel MET_SHORT or MET_UCHAR")
    try:
        return LabelImage(meta, arr.astype(np.int64))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_field(path, phi: DisplacementField, element_type: str = "MET_FLOAT"):
    return write_mhd(path, phi.data, phi.meta, element_type, channels=phi.meta.ndim)


def read_field(path) -> DisplacementField:
    arr, meta, _, channels = read_mhd(path)
    if channels != meta.ndim:
        raise ValidationError(f"{path}: a displacement field needs {meta.ndim} channels, found {channels}")
    try:
        return DisplacementField(meta, arr.astype(np.float64))
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# landmarks

LANDMARK_AXES = ("x_mm", "y_mm", "z_mm")


def write_landmarks(path, lms: LandmarkSet):
    pts = lms.points()
    d = pts.shape[1] if pts.size else 3
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("id",) + LANDMARK_AXES[:d])
    for lm in lms.landmarks:
        w.writerow([lm.id] + [repr(float(c)) for c in lm.point])
    Path(path).write_text(buf.getvalue())


def read_landmarks(path) -> LandmarkSet:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read landmarks ({exc.strerror})") from exc
    lines = text.splitlines(keepends=True)
    header = next(csv.reader(lines[:1]), [])
    if header[:1] != ["id"] or tuple(header[1:]) not in (LANDMARK_AXES[:2], LANDMARK_AXES):
        raise ValidationError(f"{path}: header must be 'id,x_mm,y_mm[,z_mm]'")
    d = len(header) - 1
    out = []
    offset = len(lines[0])
    for lineno, line in enumerate(lines[1:], start=2):
        start, offset = offset, offset + len(line)
        if not line.strip():
            continue
        row = next(csv.reader([line]))
        if len(row) != d + 1:
            raise ValidationError(f"{path}: line {lineno} (byte offset {start}) has {len(row)} fields, expected {d + 1}")
        try:
            out.append(Landmark(tuple(float(c) for c in row[1:]), row[0]))
        except ValueError:
            raise ValidationError(f"{path}: line {lineno} (byte offset {start}) has a non-numeric coordinate") from None
    try:
        return LandmarkSet(out)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# JSON documents

def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path, obj: dict):
    obj = dict(obj)
    obj.setdefault("schema_version", SCHEMA_VERSION)
    Path(path).write_text(dumps_json(obj))


def read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read ({exc.strerror})") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at byte offset {exc.pos}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: top-level JSON value must be an object")
    ver = obj.get("schema_version", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        raise ValidationError(f"{path}: unsupported schema_version {ver}")
    return obj


# ---------------------------------------------------------------------------
# PGM rasters

def write_pgm(path, img: np.ndarray):
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValidationError("PGM output needs a 2-D uint8 array")
    rows, cols = img.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise ValidationError(f"{path}: not a binary PGM (P5) file")
    cols, rows, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValidationError(f"{path}: only 8-bit PGM is supported")
    data = blob[len(blob) - rows * cols:]
    return np.frombuffer(data, dtype=np.uint8).reshape(rows, cols)


def write_heatmap(path, grid: np.ndarray, row_values=None, col_values=None, scale: int = 16, extra=None):
    """Linearly map ``grid`` to 1..255 (NaN -> 0), upscale by ``scale`` and write PGM plus a JSON key."""
    grid = np.asarray(grid, dtype=np.float64)
    ok = np.isfinite(grid)
    vmin = float(grid[ok].min()) if ok.any() else 0.0
    vmax = float(grid[ok].max()) if ok.any() else 0.0
    span = vmax - vmin if vmax > vmin else 1.0
    img = np.zeros(grid.shape, dtype=np.uint8)
    img[ok] = np.round(1 + 254 * (grid[ok] - vmin) / span).astype(np.uint8)
    img = np.kron(img, np.ones((scale, scale), dtype=np.uint8))
    write_pgm(path, img)
    key = {"vmin": vmin, "vmax": vmax, "mapping": "gray = 1 + 254 * (v - vmin) / (vmax - vmin); NaN -> 0",
           "rows": list(row_values) if row_values is not None else None,
           "cols": list(col_values) if col_values is not None else None, "cell_pixels": scale}
    key.update(extra or {})
    write_json(Path(path).with_suffix(".json"), key)


# ---------------------------------------------------------------------------
# provenance

def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _payload_files(path):
    """A MetaImage output is the header plus its payload; other outputs are single files."""
    path = Path(path)
    files = [path]
    if path.suffix == ".mhd" and path.with_suffix(".raw").exists():
        files.append(path.with_suffix(".raw"))
    return files


def digests(paths) -> dict:
    out = {}
    for p in paths:
        for f in _payload_files(p):
            out[str(f)] = file_digest(f)
    return out


@dataclass
class RunManifest:
    command: str
    argv: list
    seed: int
    config_hash: str = ""
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    volatile: list = field(default_factory=list)   # outputs with timings, not digested
    version: str = __version__
    backend: str = ""
    started: str = ""
    finished: str = ""
    cwd: str = ""
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})

    def write(self, out_path) -> Path:
        out_path = Path(out_path)
        name = out_path.name[: -len(out_path.suffix)] if out_path.suffix else out_path.name
        target = out_path.with_name(name + ".manifest.json")
        target.write_text(dumps_json(self.to_dict()))
        return target


def now_iso() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime())


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
