"""Dataset ingestion and on-disk formats.

Matrices are written as comma-separated text with one ``#`` header line that
names the artifact, the config hash and the seed.  Posterior draws can be
stored as a flat little-endian float64 stream behind a 32-byte header:
magic ``b"QPSAMPL1"``, uint32 version, uint32 p, uint64 sample count,
8 reserved bytes; the payload is laid out ``(p, S, p)`` in C order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import operator
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SAMPLE_MAGIC = b"QPSAMPL1"
SAMPLE_VERSION = 1
_SAMPLE_HEADER = struct.Struct("<8sIIQ8x")

_OPS = {
    "==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
    ">": operator.gt, ">=": operator.ge,
    "in": lambda a, b: a in b, "not in": lambda a, b: a not in b,
}


class IngestError(ValueError):
    pass


@dataclass
class IngestReport:
    columns: list
    rows_read: int
    rows_kept: int
    missing_counts: dict
    missing_fraction: dict
    seed: int | None
    value_min: dict = field(default_factory=dict)
    value_max: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _coerce(v: str):
    try:
        return int(v)
    except ValueError:
        try:
            return float(v)
        except ValueError:
            return v.strip()


def _read_rows(path, delimiter=None):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        return [], delimiter or ","
    if delimiter is None:
        delimiter = "\t" if "\t" in lines[0] else ","
    rows = [[c.strip() for c in row] for row in csv.reader(lines, delimiter=delimiter)]
    return rows, delimiter


def _resolve_column(col, names):
    if isinstance(col, int):
        if not 0 <= col < len(names):
            raise IngestError(f"column index {col} out of range")
        return col
    if names is None or col not in names:
        raise IngestError(f"unknown column {col!r}")
    return names.index(col)


def ingest(path, schema: dict | None = None, seed=None, m: int | None = None):
    """Read a delimited integer table into a 0-based data matrix.

    ``schema`` keys (all optional): ``delimiter``, ``header`` (bool),
    ``columns`` (names or indices of the node columns; default all),
    ``filters`` (list of ``{column, op, value}`` row predicates, applied on
    raw values), ``missing_code`` (raw value marking a missing cell),
    ``origin_shift`` (subtracted from every observed value).  Missing cells
    are replaced by draws from the column's observed values.
    """
    schema = dict(schema or {})
    rows, _ = _read_rows(path, schema.get("delimiter"))
    names = None
    if schema.get("header", False):
        if not rows:
            raise IngestError("header requested but the file is empty")
        names, rows = rows[0], rows[1:]
    width = len(names) if names is not None else (len(rows[0]) if rows else 0)
    for k, row in enumerate(rows):
        if len(row) != width:
            raise IngestError(f"ragged row {k + 1}: {len(row)} fields, expected {width}")
    rows_read = len(rows)

    for flt in schema.get("filters") or []:
        idx = _resolve_column(flt["column"], names)
        op = _OPS.get(flt.get("op", "=="))
        if op is None:
            raise IngestError(f"unknown filter op {flt.get('op')!r}")
        value = flt["value"]
        rows = [row for row in rows if op(_coerce(row[idx]), value)]

    cols = schema.get("columns")
    col_idx = list(range(width)) if cols is None else [_resolve_column(c, names) for c in cols]
    col_names = [names[c] if names is not None else str(c) for c in col_idx]
    try:
        raw = np.array([[int(row[c]) for c in col_idx] for row in rows], dtype=np.int64)
    except ValueError as exc:
        raise IngestError(f"non-integer value in node columns: {exc}") from exc
    raw = raw.reshape(len(rows), len(col_idx))

    missing_code = schema.get("missing_code")
    missing = raw == missing_code if missing_code is not None else np.zeros(raw.shape, dtype=bool)
    data = raw - int(schema.get("origin_shift", 0))
    rng = np.random.default_rng(seed)
    for j in range(data.shape[1]):
        miss = missing[:, j]
        if not miss.any():
            continue
        observed = data[~miss, j]
        if observed.size == 0:
            raise IngestError(f"column {col_names[j]!r} is entirely missing")
        data[miss, j] = rng.choice(observed, size=int(miss.sum()))
    if data.size and data.min() < 0:
        raise IngestError("negative value after origin shift")
    if m is not None and data.size and data.max() >= m:
        raise IngestError(f"value {data.max()} outside 0..{m - 1} after origin shift")

    n = max(len(rows), 1)
    report = IngestReport(
        columns=col_names,
        rows_read=rows_read,
        rows_kept=len(rows),
        missing_counts={c: int(missing[:, j].sum()) for j, c in enumerate(col_names)},
        missing_fraction={c: float(missing[:, j].sum() / n) for j, c in enumerate(col_names)},
        seed=None if seed is None else int(seed),
        value_min={c: int(data[:, j].min()) for j, c in enumerate(col_names)} if data.size else {},
        value_max={c: int(data[:, j].max()) for j, c in enumerate(col_names)} if data.size else {},
    )
    return data, report


def header_line(kind: str, cfg_hash: str, seed) -> str:
    return f"quasipotts {kind} config_sha256={cfg_hash} seed={seed}"


def write_matrix(path, M, kind: str, cfg_hash: str, seed, integer: bool = False):
    fmt = "%d" if integer else "%.17g"
    np.savetxt(path, np.asarray(M), delimiter=",", fmt=fmt, header=header_line(kind, cfg_hash, seed))


def read_matrix(path, dtype=np.float64):
    return np.atleast_2d(np.loadtxt(path, delimiter=",", comments="#", dtype=dtype))


def read_header(path) -> dict:
    with open(path) as fh:
        first = fh.readline().lstrip("#").split()
    return dict(tok.split("=", 1) for tok in first if "=" in tok)


def write_samples(path, samples):
    arr = np.ascontiguousarray(samples, dtype="<f8")
    if arr.ndim != 3 or arr.shape[0] != arr.shape[2]:
        raise ValueError("samples must be shaped (p, S, p)")
    p, S, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(_SAMPLE_HEADER.pack(SAMPLE_MAGIC, SAMPLE_VERSION, p, S))
        fh.write(arr.tobytes())


def read_samples(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    magic, version, p, S = _SAMPLE_HEADER.unpack_from(blob)
    if magic != SAMPLE_MAGIC or version != SAMPLE_VERSION:
        raise ValueError(f"{path}: not a quasipotts sample file")
    data = np.frombuffer(blob, dtype="<f8", offset=_SAMPLE_HEADER.size)
    if data.size != p * S * p:
        raise ValueError(f"{path}: truncated sample payload")
    return data.reshape(p, S, p).astype(np.float64)


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")
