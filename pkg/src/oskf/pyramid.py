"""Feature pyramid container, bilinear sampling and OSKF extraction.

Positions are in pixels of the square network crop (``crop_size`` wide).
Level ``l`` covers the crop with ``h_l x w_l`` cells, so its stride is
``crop_size / w_l``; cell ``i`` is centred at ``(i + 0.5) * stride``.
Samples outside a map read zeros.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import FormatError


@dataclass(frozen=True)
class FeaturePyramid:
    levels: tuple
    crop_size: float

    def __post_init__(self):
        levels = tuple(np.asarray(m, dtype=np.float64) for m in self.levels)
        if not levels:
            raise ValueError("pyramid needs at least one level")
        C = levels[0].shape[-1]
        for m in levels:
            if m.ndim != 3 or m.shape[-1] != C:
                raise ValueError("levels must be (h, w, C) with a shared channel count")
        object.__setattr__(self, "levels", levels)

    @property
    def num_levels(self):
        return len(self.levels)

    @property
    def channels(self):
        return self.levels[0].shape[-1]

    @property
    def dims(self):
        return [m.shape[:2] for m in self.levels]

    @staticmethod
    def stride_dims(crop_size, num_levels=4):
        """Level sizes s/4, s/8, ... for a crop of edge ``crop_size``."""
        return [(crop_size // (4 * 2**i), crop_size // (4 * 2**i)) for i in range(num_levels)]


@dataclass(frozen=True)
class OskfSet:
    features: np.ndarray  # (K, L, C)
    positions: np.ndarray  # (K, 2)


def level_coords(position_px, shape, crop_size):
    """Crop pixels -> continuous cell indices (x, y) of a level with ``shape``."""
    p = np.asarray(position_px, dtype=np.float64)
    h, w = shape[:2]
    x = p[..., 0] * (w / crop_size) - 0.5
    y = p[..., 1] * (h / crop_size) - 0.5
    return x, y


def bilinear_sample(level_map, position_px, crop_size):
    """Sample one level at crop-pixel position(s).

    ``position_px`` may be a single 2-vector or an (..., 2) array; returns
    the matching (..., C) array.
    """
    m = np.asarray(level_map, dtype=np.float64)
    h, w, C = m.shape
    x, y = level_coords(position_px, m.shape, crop_size)
    x = np.clip(x, -2.0, w + 1.0)
    y = np.clip(y, -2.0, h + 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0
    out = np.zeros(np.shape(x) + (C,))
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = m[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += (wx * wy * ok)[..., None] * vals
    return out


def extract_oskf(pyramid, positions_2d):
    pos = np.asarray(positions_2d, dtype=np.float64).reshape(-1, 2)
    feats = np.stack([bilinear_sample(m, pos, pyramid.crop_size) for m in pyramid.levels], axis=1)
    return OskfSet(feats, pos.copy())


# ---------------------------------------------------------------- file format
#
# One JSON header line {"L":..,"C":..,"s":..,"dims":[[h,w],..]} terminated by
# "\n", then each level as little-endian float64, row-major, channel-last.

def save_pyramid(path_or_file, pyramid):
    header = {
        "L": pyramid.num_levels,
        "C": pyramid.channels,
        "s": pyramid.crop_size,
        "dims": [list(map(int, d)) for d in pyramid.dims],
    }
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "wb") if own else path_or_file
    try:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for m in pyramid.levels:
            f.write(np.ascontiguousarray(m, dtype="<f8").tobytes())
    finally:
        if own:
            f.close()


def load_pyramid(path):
    with open(path, "rb") as f:
        raw = f.read()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("pyramid file has no header line")
    try:
        header = json.loads(raw[:nl])
        L, C, s, dims = int(header["L"]), int(header["C"]), header["s"], header["dims"]
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"bad pyramid header: {e}") from None
    if len(dims) != L:
        raise FormatError("header dims do not match L")
    payload = raw[nl + 1:]
    need = sum(int(h) * int(w) * C for h, w in dims) * 8
    if len(payload) != need:
        raise FormatError(f"pyramid payload is {len(payload)} bytes, expected {need}")
    levels, off = [], 0
    for h, w in dims:
        n = int(h) * int(w) * C
        levels.append(np.frombuffer(payload, dtype="<f8", count=n, offset=off).reshape(h, w, C).astype(np.float64))
        off += n * 8
    return FeaturePyramid(tuple(levels), s)
