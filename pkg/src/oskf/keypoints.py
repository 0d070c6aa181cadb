"""Object models, farthest point sampling and the ASCII PLY reader."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidK, PlyError, TooFewPoints
from .geometry import is_rotation

DEFAULT_K = 64


@dataclass
class ObjectModel:
    points: np.ndarray
    diameter: float = None
    symmetries: list = field(default_factory=list)
    symmetric: bool = False

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise TooFewPoints("object model has no points")
        if self.diameter is None:
            self.diameter = model_diameter(self.points)
        syms = [np.asarray(S, dtype=np.float64).reshape(3, 3) for S in self.symmetries]
        if not any(np.allclose(S, np.eye(3), atol=1e-12) for S in syms):
            syms.insert(0, np.eye(3))
        for S in syms:
            if not is_rotation(S, 1e-6):
                raise ValueError("symmetry matrix is not a rotation")
        self.symmetries = syms


@dataclass
class KeypointSet:
    keypoints: np.ndarray
    indices: np.ndarray

    @property
    def k(self):
        return len(self.keypoints)

    def to_json(self):
        return [list(map(float, p)) for p in self.keypoints]


def model_diameter(points, block=1024):
    """Largest pairwise distance, exact, O(n^2) time in row blocks."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        raise TooFewPoints("diameter needs at least two points")
    best = 0.0
    for i in range(0, len(pts), block):
        chunk = pts[i:i + block]
        d = np.linalg.norm(chunk[:, None, :] - pts[None, i:, :], axis=-1)
        best = max(best, float(d.max()))
    return best


def default_seed_index(points):
    pts = np.asarray(points, dtype=np.float64)
    return int(np.argmax(np.linalg.norm(pts - pts.mean(axis=0), axis=1)))


def farthest_point_sample(model, k=DEFAULT_K, seed_index=None):
    """Greedy max-min selection starting at ``seed_index``.

    Ties go to the lowest index. When ``seed_index`` is None the point
    farthest from the centroid is used.
    """
    pts = model.points if isinstance(model, ObjectModel) else np.asarray(model, dtype=np.float64)
    n = len(pts)
    if not 1 <= k <= n:
        raise InvalidK(f"k={k} outside [1, {n}]")
    if seed_index is None:
        seed_index = default_seed_index(pts)
    if not 0 <= seed_index < n:
        raise InvalidK(f"seed_index={seed_index} outside [0, {n})")

    chosen = [int(seed_index)]
    mind = np.linalg.norm(pts - pts[seed_index], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, np.linalg.norm(pts - pts[nxt], axis=1))
    idx = np.array(chosen, dtype=np.int64)
    return KeypointSet(pts[idx].copy(), idx)


def save_keypoints(path, keypoints):
    with open(path, "w") as f:
        json.dump(keypoints.to_json(), f)
        f.write("\n")


def load_keypoints(path):
    with open(path) as f:
        data = np.asarray(json.load(f), dtype=np.float64).reshape(-1, 3)
    return KeypointSet(data, np.arange(len(data)))


# ---------------------------------------------------------------- PLY

def read_ply(path):
    """Vertex positions from an ASCII PLY file as an (N, 3) array.

    Only ``element vertex`` with ``x``, ``y``, ``z`` properties is read;
    other elements are skipped. Errors carry the 1-based line number.
    """
    with open(path) as f:
        lines = f.read().splitlines()

    def line(i):
        if i >= len(lines):
            raise PlyError("unexpected end of file", i + 1)
        return lines[i].strip()

    if line(0) != "ply":
        raise PlyError("missing 'ply' magic", 1)
    i = 1
    elements = []  # (name, count, [property names or None for lists])
    fmt_seen = False
    while True:
        tok = line(i).split()
        if not tok or tok[0] in ("comment", "obj_info"):
            i += 1
            continue
        if tok[0] == "format":
            if len(tok) < 3 or tok[1] != "ascii":
                raise PlyError(f"unsupported format {' '.join(tok[1:])!r}", i + 1)
            fmt_seen = True
        elif tok[0] == "element":
            if len(tok) != 3:
                raise PlyError("malformed element line", i + 1)
            try:
                count = int(tok[2])
            except ValueError:
                raise PlyError(f"bad element count {tok[2]!r}", i + 1) from None
            if count < 0:
                raise PlyError("negative element count", i + 1)
            elements.append((tok[1], count, []))
        elif tok[0] == "property":
            if not elements:
                raise PlyError("property before any element", i + 1)
            if len(tok) >= 2 and tok[1] == "list":
                if len(tok) != 5:
                    raise PlyError("malformed list property", i + 1)
                elements[-1][2].append(None)
            elif len(tok) == 3:
                elements[-1][2].append(tok[2])
            else:
                raise PlyError("malformed property line", i + 1)
        elif tok[0] == "end_header":
            i += 1
            break
        else:
            raise PlyError(f"unexpected header keyword {tok[0]!r}", i + 1)
        i += 1
    if not fmt_seen:
        raise PlyError("missing format line", i)

    vertex = None
    for name, count, props in elements:
        if name == "vertex":
            cols = []
            for axis in ("x", "y", "z"):
                if axis not in props:
                    raise PlyError(f"vertex element lacks property {axis!r}")
                cols.append(props.index(axis))
            if None in props:
                raise PlyError("list properties on vertex element are not supported")
            out = np.empty((count, 3))
            for r in range(count):
                vals = line(i + r).split()
                if len(vals) != len(props):
                    raise PlyError(f"expected {len(props)} values, got {len(vals)}", i + r + 1)
                try:
                    out[r] = [float(vals[c]) for c in cols]
                except ValueError:
                    raise PlyError("non-numeric vertex value", i + r + 1) from None
            vertex = out
        i += count
    if vertex is None:
        raise PlyError("no vertex element")
    if not np.all(np.isfinite(vertex)):
        raise PlyError("non-finite vertex coordinate")
    return vertex


def write_ply(path, points):
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    with open(path, "w") as f:
        f.write(f"ply\nformat ascii 1.0\nelement vertex {len(pts)}\n")
        f.write("property float x\nproperty float y\nproperty float z\nend_header\n")
        for p in pts:
            f.write(" ".join(repr(float(v)) for v in p) + "\n")
