"""
Snapshot files.

Text format (bit-exact, shared by both engines):
    line 1:  "<width> <height> <n_shots>"
    then one line per shot: width*height characters '0'/'1', row-major (linear index x + width*y)
Metadata lives in a sidecar "<file>.json".
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from analysis.errors import InvalidArgument, SnapshotFormatError

SIGN_CONVENTION = "AF1 = Rydberg on even parity (x+y even), staggered m = (-1)^(x+y) (2n-1)"


@dataclass
class SnapshotSet:
    width: int
    height: int
    shots: np.ndarray                   # (n_shots, height, width) uint8
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        shots = np.asarray(self.shots)
        if shots.ndim == 2:
            shots = shots[None]
        if shots.ndim != 3 or shots.shape[1:] != (self.height, self.width):
            raise InvalidArgument(f"shots shape {shots.shape} does not match {self.height}x{self.width}")
        if shots.size and not np.all((shots == 0) | (shots == 1)):
            raise InvalidArgument("snapshot values must be 0 or 1")
        self.shots = shots.astype(np.uint8)

    @property
    def n_shots(self) -> int:
        return int(self.shots.shape[0])

    def subset(self, keep: np.ndarray, **meta_updates) -> "SnapshotSet":
        meta = dict(self.meta)
        meta.update(meta_updates)
        return SnapshotSet(self.width, self.height, self.shots[keep], meta)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_snapshots(path, snapset: SnapshotSet) -> Path:
    """Write the shot file and its JSON sidecar; returns the shot file path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flat = snapset.shots.reshape(snapset.n_shots, snapset.width * snapset.height)
    chars = (flat + ord("0")).astype(np.uint8)
    lines = [f"{snapset.width} {snapset.height} {snapset.n_shots}".encode()]
    lines.extend(row.tobytes() for row in chars)
    path.write_bytes(b"\n".join(lines) + b"\n")

    sidecar_path(path).write_text(json.dumps(_jsonable(snapset.meta), indent=2, sort_keys=True) + "\n")
    return path


def read_snapshots(path) -> SnapshotSet:
    """Parse a shot file (and sidecar if present). Errors name the byte offset."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise SnapshotFormatError(str(e), str(path)) from e

    nl = raw.find(b"\n")
    header = raw if nl < 0 else raw[:nl]
    parts = header.split()
    try:
        width, height, n_shots = (int(p) for p in parts)
    except ValueError:
        raise SnapshotFormatError("header must be 'width height n_shots'", str(path), 0) from None
    if width < 1 or height < 1 or n_shots < 0:
        raise SnapshotFormatError("non-positive dimensions in header", str(path), 0)

    n = width * height
    shots = np.empty((n_shots, n), dtype=np.uint8)
    offset = nl + 1 if nl >= 0 else len(raw)
    for k in range(n_shots):
        if offset >= len(raw):
            raise SnapshotFormatError(f"expected {n_shots} shots, found {k}", str(path), offset)
        end = raw.find(b"\n", offset)
        end = len(raw) if end < 0 else end
        line = raw[offset:end].rstrip(b"\r")
        if len(line) != n:
            raise SnapshotFormatError(f"shot {k} has {len(line)} sites, expected {n}", str(path), offset)
        vals = np.frombuffer(line, dtype=np.uint8) - ord("0")
        bad = np.flatnonzero(vals > 1)
        if bad.size:
            raise SnapshotFormatError(f"invalid character in shot {k}", str(path), offset + int(bad[0]))
        shots[k] = vals
        offset = end + 1
    if raw[offset:].strip():
        raise SnapshotFormatError("trailing data after last shot", str(path), offset)

    meta = {}
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError as e:
            raise SnapshotFormatError(f"bad sidecar JSON: {e.msg}", str(side), e.pos) from None
    return SnapshotSet(width, height, shots.reshape(n_shots, height, width), meta)
