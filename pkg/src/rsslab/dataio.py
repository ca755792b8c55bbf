"""Recording CSV format, foreign-layout conversion, and model artifacts.

Recording CSV: UTF-8, header ``t,x,y,rss_<apid>,...``, one row per RSS sample.
Missing RSS readings are written as empty fields and held in memory as NaN.
Floats are written with ``repr`` so reading back is bit-exact. Metadata goes
to a JSON sidecar next to the CSV (``exp5.csv`` -> ``exp5.json``).

Model artifact: a single text file of three lines::

    {header JSON}
    <base64 of the concatenated little-endian array blob>
    crc32 <8 hex digits over the bytes of the first two lines>
"""
from __future__ import annotations

import base64
import csv
import io
import json
import math
import os
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptArtifact, ParseError, SchemaError, ValidationError

RSS_PREFIX = "rss_"
MODEL_KINDS = ("knn", "knn_interp", "cnn")
SCHEMA_VERSION = 1


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@dataclass(eq=False)
class Recording:
    """Synchronized positions and per-AP RSS for one receiver.

    ``xy`` holds the position labels (what the camera reported); ``truth_xy``
    optionally holds the noise-free path for synthetic data and is not
    persisted.
    """

    name: str
    receiver_id: str
    ap_ids: tuple[str, ...]
    t: np.ndarray
    xy: np.ndarray
    rss: np.ndarray
    truth_xy: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ap_ids = tuple(str(a) for a in self.ap_ids)
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        self.rss = np.asarray(self.rss, dtype=float).reshape(len(self.t), -1) if len(self.t) else np.zeros((0, len(self.ap_ids)))
        if self.truth_xy is not None:
            self.truth_xy = np.asarray(self.truth_xy, dtype=float).reshape(-1, 2)
        self.validate()

    def validate(self) -> None:
        n = len(self.t)
        if len(set(self.ap_ids)) != len(self.ap_ids):
            raise ValidationError("duplicate AP ids")
        if self.xy.shape != (n, 2):
            raise ValidationError(f"xy has shape {self.xy.shape}, expected ({n}, 2)")
        if self.rss.shape != (n, len(self.ap_ids)):
            raise ValidationError(f"rss has shape {self.rss.shape}, expected ({n}, {len(self.ap_ids)})")
        if self.truth_xy is not None and self.truth_xy.shape != (n, 2):
            raise ValidationError("truth_xy shape does not match xy")
        if not np.all(np.isfinite(self.t)):
            raise ValidationError("timestamps must be finite")
        if n > 1:
            bad = np.flatnonzero(np.diff(self.t) <= 0)
            if bad.size:
                raise ValidationError(f"timestamps not strictly increasing at row {bad[0] + 1}")
        if not np.all(np.isfinite(self.xy)):
            raise ValidationError("positions must be finite")
        if np.any(np.isinf(self.rss)):
            raise ValidationError("RSS must be finite or missing (NaN)")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def num_aps(self) -> int:
        return len(self.ap_ids)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.rss)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.name == other.name
            and self.receiver_id == other.receiver_id
            and self.ap_ids == other.ap_ids
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.rss, other.rss, equal_nan=True)
        )


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def recording_csv_text(rec: Recording) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "y"] + [RSS_PREFIX + a for a in rec.ap_ids])
    for i in range(len(rec)):
        w.writerow([_fmt(rec.t[i]), _fmt(rec.xy[i, 0]), _fmt(rec.xy[i, 1])] + [_fmt(v) for v in rec.rss[i]])
    return buf.getvalue()


def write_recording(rec: Recording, path) -> None:
    path = Path(path)
    atomic_write_text(path, recording_csv_text(rec))
    side = {"name": rec.name, "receiver_id": rec.receiver_id, "ap_ids": list(rec.ap_ids),
            "units": {"t": "s", "x": "m", "y": "m", "rss": "dBm"}, "meta": rec.meta}
    atomic_write_text(sidecar_path(path), dump_json(side))


def _parse_float(text: str, path, row: int, col: int, allow_missing: bool) -> float:
    s = text.strip()
    if s == "":
        if allow_missing:
            return math.nan
        raise ParseError("empty value", path, row, col)
    try:
        v = float(s)
    except ValueError:
        raise ParseError(f"not a number: {s!r}", path, row, col) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value: {s!r}", path, row, col)
    return v


def parse_recording_csv(text: str, path="<memory>", name=None, receiver_id="unknown", meta=None) -> Recording:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["t", "x", "y"] or not all(h.startswith(RSS_PREFIX) and len(h) > 4 for h in header[3:]):
        raise SchemaError(f"{path}: header must be t,x,y,rss_<ap>..., got {','.join(header)}")
    if len(header) == 3:
        raise SchemaError(f"{path}: no rss_ columns")
    ap_ids = tuple(h[len(RSS_PREFIX):] for h in header[3:])
    ncol = len(header)
    body = [(i + 2, r) for i, r in enumerate(rows[1:]) if r]  # line numbers, header is line 1
    t = np.empty(len(body))
    xy = np.empty((len(body), 2))
    rss = np.empty((len(body), ncol - 3))
    for k, (line, r) in enumerate(body):
        if len(r) != ncol:
            raise ParseError(f"expected {ncol} fields, got {len(r)}", path, line)
        t[k] = _parse_float(r[0], path, line, 1, False)
        xy[k, 0] = _parse_float(r[1], path, line, 2, False)
        xy[k, 1] = _parse_float(r[2], path, line, 3, False)
        for j in range(3, ncol):
            rss[k, j - 3] = _parse_float(r[j], path, line, j + 1, True)
        if k and t[k] <= t[k - 1]:
            raise ParseError(f"timestamp {float(t[k])!r} not after previous {float(t[k - 1])!r}", path, line, 1)
    return Recording(name=name or Path(str(path)).stem, receiver_id=receiver_id, ap_ids=ap_ids,
                     t=t, xy=xy, rss=rss, meta=meta or {})


def read_recording(path) -> Recording:
    """Read a canonical recording CSV (and its sidecar, if present).

    Raises:
        SchemaError: header is not ``t,x,y,rss_*``.
        ParseError: bad value or non-increasing timestamp, with line/column.
    """
    path = Path(path)
    name, receiver, meta = path.stem, "unknown", {}
    side = sidecar_path(path)
    if side.exists():
        try:
            info = json.loads(side.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ParseError(f"bad sidecar JSON: {e.msg}", side, e.lineno, e.colno) from None
        name = info.get("name", name)
        receiver = info.get("receiver_id", receiver)
        meta = info.get("meta", {})
    text = path.read_text(encoding="utf-8")
    rec = parse_recording_csv(text, path, name=name, receiver_id=receiver, meta=meta)
    if side.exists() and "ap_ids" in info and tuple(info["ap_ids"]) != rec.ap_ids:
        raise SchemaError(f"{path}: sidecar AP ids {info['ap_ids']} do not match header {list(rec.ap_ids)}")
    return rec


def read_dataset(directory) -> list[Recording]:
    """All recordings in a directory, sorted by file name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"data directory not found: {directory}")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no recording CSV files in {directory}")
    return [read_recording(f) for f in files]


def convert_recording(src, column_map: dict, dst=None, name=None, receiver_id=None) -> Recording:
    """Map a foreign CSV layout onto the canonical one.

    ``column_map`` keys: ``t``, ``x``, ``y`` (foreign column names) and ``rss``
    (mapping AP id -> foreign column). Optional: ``t_scale`` (multiplier to
    seconds), ``xy_scale`` (multiplier to meters), ``missing`` (list of
    strings read as missing RSS), ``sort`` (sort rows by time and drop
    repeated timestamps).
    """
    allowed = {"t", "x", "y", "rss", "t_scale", "xy_scale", "missing", "sort"}
    unknown = set(column_map) - allowed
    if unknown:
        raise SchemaError(f"unknown column-map keys: {sorted(unknown)}")
    for k in ("t", "x", "y", "rss"):
        if k not in column_map:
            raise SchemaError(f"column map lacks {k!r}")
    src = Path(src)
    with open(src, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise SchemaError(f"{src}: empty file")
    header = [h.strip() for h in rows[0]]
    index = {h: i for i, h in enumerate(header)}
    wanted = [column_map["t"], column_map["x"], column_map["y"], *column_map["rss"].values()]
    for col in wanted:
        if col not in index:
            raise SchemaError(f"{src}: column {col!r} not in header")
    missing = {m.strip() for m in column_map.get("missing", ["", "nan", "NaN"])}
    t_scale = float(column_map.get("t_scale", 1.0))
    xy_scale = float(column_map.get("xy_scale", 1.0))
    ap_ids = tuple(column_map["rss"].keys())
    t, xy, rss = [], [], []
    for line, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        if len(r) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(r)}", src, line)
        t.append(_parse_float(r[index[column_map["t"]]], src, line, index[column_map["t"]] + 1, False) * t_scale)
        xy.append([
            _parse_float(r[index[column_map[a]]], src, line, index[column_map[a]] + 1, False) * xy_scale
            for a in ("x", "y")
        ])
        vals = []
        for col in column_map["rss"].values():
            raw = r[index[col]].strip()
            vals.append(math.nan if raw in missing else _parse_float(raw, src, line, index[col] + 1, True))
        rss.append(vals)
    t = np.asarray(t)
    xy = np.asarray(xy).reshape(-1, 2)
    rss = np.asarray(rss).reshape(len(t), len(ap_ids))
    if column_map.get("sort"):
        order = np.argsort(t, kind="stable")
        t, xy, rss = t[order], xy[order], rss[order]
        keep = np.concatenate([[True], np.diff(t) > 0]) if len(t) else np.zeros(0, bool)
        t, xy, rss = t[keep], xy[keep], rss[keep]
    else:
        bad = np.flatnonzero(np.diff(t) <= 0)
        if bad.size:
            raise ParseError("timestamps not strictly increasing", src, int(bad[0]) + 3, index[column_map["t"]] + 1)
    rec = Recording(name=name or src.stem, receiver_id=receiver_id or "unknown", ap_ids=ap_ids,
                    t=t, xy=xy, rss=rss, meta={"converted_from": src.name})
    if dst is not None:
        write_recording(rec, dst)
    return rec


# -- model artifacts ----------------------------------------------------------


@dataclass(eq=False)
class ModelArtifact:
    kind: str
    hyperparameters: dict
    payload: dict[str, np.ndarray]
    normalization: dict
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise SchemaError(f"unknown model kind {self.kind!r}")
        for k, v in _flat_numbers(self.normalization):
            if not math.isfinite(v):
                raise ValidationError(f"normalization stat {k} is not finite")


def _flat_numbers(d, prefix=""):
    for k, v in d.items():
        if isinstance(v, dict):
            yield from _flat_numbers(v, f"{prefix}{k}.")
        elif isinstance(v, (list, tuple, np.ndarray)):
            for i, x in enumerate(np.asarray(v, dtype=float).ravel()):
                yield f"{prefix}{k}[{i}]", float(x)
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            yield prefix + k, float(v)


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def artifact_bytes(m: ModelArtifact) -> bytes:
    arrays, blob, offset = [], io.BytesIO(), 0
    for name in sorted(m.payload):
        a = np.ascontiguousarray(m.payload[name])
        if a.dtype.kind not in "fiu":
            raise ValidationError(f"payload {name!r} has unsupported dtype {a.dtype}")
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        arrays.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blob.write(raw)
        offset += len(raw)
    header = {
        "format": "rsslab-model",
        "schema_version": m.schema_version,
        "kind": m.kind,
        "hyperparameters": _to_jsonable(m.hyperparameters),
        "normalization": _to_jsonable(m.normalization),
        "arrays": arrays,
    }
    body = (json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
            + base64.b64encode(blob.getvalue()).decode("ascii") + "\n").encode("ascii")
    return body + f"crc32 {zlib.crc32(body):08x}\n".encode("ascii")


def save_model(m: ModelArtifact, path) -> None:
    atomic_write_bytes(path, artifact_bytes(m))


def parse_artifact(data: bytes, source="<memory>") -> ModelArtifact:
    lines = data.split(b"\n")
    if len(lines) != 4 or lines[3] != b"" or not lines[2].startswith(b"crc32 "):
        raise CorruptArtifact(f"{source}: truncated or malformed artifact")
    body = lines[0] + b"\n" + lines[1] + b"\n"
    try:
        expected = int(lines[2][6:].decode("ascii"), 16)
    except (UnicodeDecodeError, ValueError):
        raise CorruptArtifact(f"{source}: unreadable checksum") from None
    if lines[2] != f"crc32 {expected:08x}".encode() or zlib.crc32(body) != expected:
        raise CorruptArtifact(f"{source}: checksum mismatch")
    try:
        header = json.loads(lines[0])
        blob = base64.b64decode(lines[1], validate=True)
    except (ValueError, UnicodeDecodeError) as e:
        raise CorruptArtifact(f"{source}: undecodable content ({e})") from None
    if header.get("format") != "rsslab-model":
        raise SchemaError(f"{source}: not an rsslab model artifact")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{source}: unsupported schema_version {header.get('schema_version')!r}")
    payload = {}
    for spec in header["arrays"]:
        raw = blob[spec["offset"]: spec["offset"] + spec["nbytes"]]
        if len(raw) != spec["nbytes"]:
            raise CorruptArtifact(f"{source}: array {spec['name']!r} truncated")
        payload[spec["name"]] = np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"]).copy()
    return ModelArtifact(kind=header["kind"], hyperparameters=header["hyperparameters"], payload=payload,
                         normalization=header["normalization"], schema_version=header["schema_version"])


def load_model(path) -> ModelArtifact:
    """Load and verify a model artifact.

    Raises:
        CorruptArtifact: truncated file or checksum mismatch.
        SchemaError: wrong format tag or unsupported schema version.
    """
    return parse_artifact(Path(path).read_bytes(), source=path)
