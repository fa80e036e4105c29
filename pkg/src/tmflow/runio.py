"""On-disk formats: binary snapshots, CSV histories, JSON reports.

Snapshot layout (little-endian throughout):
  bytes 0..15   magic b"TMFLOW-SNAP-v01\\n"
  uint32        kind (0 = torus, 1 = cylinder, 2 = sphere)
  uint32        n (target sphere dimension; 0 for scalar fields)
  uint32 x 2    grid shape N1, N2
  float64 x 3   time, p1, p2 (torus: a, b; cylinder: ell, X0; sphere: cap, 0)
  float64 ...   row-major nodal values, shape (N1, N2, n + 1)

CSV histories carry a header row and %.17g decimals, so identical runs
reproduce byte-identical files.  JSON reports are sorted-key, 2-space
indented for the same reason.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TMFLOW-SNAP-v01\n"
KIND_TORUS = 0
KIND_CYLINDER = 1
KIND_SPHERE = 2

_HEADER = struct.Struct("<IIIIddd")


def write_snapshot(path, kind: int, time: float, p1: float, p2: float, data: np.ndarray):
    data = np.ascontiguousarray(data, dtype="<f8")
    if data.ndim == 2:
        data = data[..., None]
    if data.ndim != 3:
        raise ValueError(f"snapshot data must be (N1, N2, n+1), got shape {data.shape}")
    n1, n2, comps = data.shape
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_HEADER.pack(kind, comps - 1, n1, n2, time, p1, p2))
        f.write(data.tobytes())


def read_snapshot(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a snapshot file (bad magic)")
    kind, n, n1, n2, time, p1, p2 = _HEADER.unpack_from(raw, len(MAGIC))
    body = np.frombuffer(raw, dtype="<f8", offset=len(MAGIC) + _HEADER.size)
    expected = n1 * n2 * (n + 1)
    if body.size != expected:
        raise ValueError(f"{path}: truncated snapshot ({body.size} != {expected} values)")
    return {
        "kind": kind,
        "time": time,
        "p1": p1,
        "p2": p2,
        "data": body.reshape(n1, n2, n + 1).copy(),
    }


def write_history_csv(path, columns, rows):
    with open(path, "w", newline="\n") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join("%.17g" % x for x in row) + "\n")


def read_history_csv(path):
    with open(path) as f:
        columns = f.readline().strip().split(",")
        rows = [tuple(float(x) for x in line.split(",")) for line in f if line.strip()]
    return columns, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, float) and obj != obj:  # NaN has no JSON spelling
        return None
    return obj


def write_json_report(path, report: dict):
    with open(path, "w") as f:
        json.dump(_jsonable(report), f, indent=2, sort_keys=True)
        f.write("\n")


def read_json_report(path) -> dict:
    with open(path) as f:
        return json.load(f)
