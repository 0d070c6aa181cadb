"""Synthetic oracle scenes.

A scene is a toy object under a random pose, a perturbed detection crop and
an analytically rendered feature pyramid standing in for backbone features:
each level holds splatted object-frame coordinates plus inverse depth,
lightly smoothed, with extra channels made by a fixed random mixing of the
first four.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import CameraIntrinsics, CropFrame, Pose, axis_angle_matrix, encode_pose
from .keypoints import ObjectModel
from .pyramid import FeaturePyramid, save_pyramid

DEFAULT_INTRINSICS = CameraIntrinsics(572.4114, 573.57043, 325.2611, 242.04899)
IMAGE_SIZE = (640, 480)
SMOOTH_TAPS = np.array([0.25, 0.5, 0.25])


@dataclass(frozen=True)
class SceneConfig:
    crop_size: int = 64
    levels: int = 4
    channels: int = 32
    depth_range: tuple = (0.7, 1.1)
    max_angle_deg: float = None  # None -> uniform on SO(3)
    base_rotation: tuple = None  # 9 numbers, row-major; None -> identity
    dzi_shift: float = 0.25
    dzi_scale: tuple = (0.8, 1.25)
    enlarge: float = 1.2
    image_size: tuple = IMAGE_SIZE
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    mix_seed: int = 12345
    max_tries: int = 100

    @property
    def s_image(self):
        return float(max(self.image_size))

    def level_dims(self):
        return FeaturePyramid.stride_dims(self.crop_size, self.levels)


@dataclass
class SynthScene:
    model: ObjectModel
    gt_pose: Pose
    crop: CropFrame
    K_cam: CameraIntrinsics
    pyramid: FeaturePyramid
    rng_seed: int
    gt_state: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self.gt_state is None:
            self.gt_state = encode_pose(self.gt_pose, self.crop, self.K_cam)


# ---------------------------------------------------------------- objects

def make_toy_object(n_points=400, seed=0):
    """Asymmetric test object: a box with an off-centre stub on one face."""
    rng = np.random.default_rng(seed)
    half = np.array([0.05, 0.035, 0.025])
    n_box = int(n_points * 0.8)
    pts = rng.uniform(-1.0, 1.0, (n_box, 3))
    face = rng.integers(0, 3, n_box)
    pts[np.arange(n_box), face] = np.sign(pts[np.arange(n_box), face] + 1e-12)
    pts *= half
    # stub: a short square post on the +x face, offset towards +y
    n_stub = n_points - n_box
    stub = rng.uniform(-1.0, 1.0, (n_stub, 3)) * np.array([0.02, 0.01, 0.01])
    stub += np.array([0.07, 0.02, 0.0])
    pts = np.concatenate([pts, stub])
    return ObjectModel(pts - pts.mean(axis=0))


# ---------------------------------------------------------------- poses

def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng, depth_range=(0.7, 1.1), frustum=None, max_angle_deg=None, base_rotation=None):
    """Rotation uniform on SO(3) (or within ``max_angle_deg`` of
    ``base_rotation``); translation with uniform depth and a uniformly
    drawn image position inside ``frustum = (K, (width, height), margin)``."""
    if max_angle_deg is None:
        R = random_rotation(rng)
    else:
        axis = rng.normal(size=3)
        angle = np.radians(max_angle_deg) * rng.uniform() ** (1.0 / 3.0)
        R = axis_angle_matrix(axis, angle)
    if base_rotation is not None:
        R = R @ np.asarray(base_rotation, dtype=np.float64).reshape(3, 3)
    z = rng.uniform(*depth_range)
    K, (w, h), margin = frustum or (DEFAULT_INTRINSICS, IMAGE_SIZE, 0.15)
    u = rng.uniform(margin * w, (1 - margin) * w)
    v = rng.uniform(margin * h, (1 - margin) * h)
    t = np.array([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z])
    return Pose(R, t)


# ---------------------------------------------------------------- crops

def tight_crop(model, pose, K, s_image):
    pts = pose.transform(model.points)
    u = K.fx * pts[:, 0] / pts[:, 2] + K.cx
    v = K.fy * pts[:, 1] / pts[:, 2] + K.cy
    lo = np.array([u.min(), v.min()])
    hi = np.array([u.max(), v.max()])
    w, h = hi - lo
    return CropFrame.from_bbox((lo + hi) / 2.0, w, h, s_image)


def dzi_perturb(crop, rng, shift_frac=0.25, scale_range=(0.8, 1.25)):
    """Uniform jitter of crop centre (fraction of s_bbox) and scale."""
    shift = rng.uniform(-shift_frac, shift_frac, 2) * crop.s_bbox
    scale = rng.uniform(*scale_range)
    return CropFrame(crop.center + shift, crop.s_bbox * scale, crop.s_image,
                     crop.width * scale, crop.height * scale)


def enlarge_bbox(crop, factor=1.2):
    return crop.scaled(factor)


def within_crop(model, pose, K, crop, bound=1.5):
    pts = pose.transform(model.points)
    if np.any(pts[:, 2] <= 0):
        return False
    uv = np.stack([K.fx * pts[:, 0] / pts[:, 2] + K.cx, K.fy * pts[:, 1] / pts[:, 2] + K.cy], axis=1)
    return bool(np.all(np.abs(uv - crop.center) <= 0.5 * bound * crop.s_bbox))


# ---------------------------------------------------------------- rendering

def splat_level(model, pose, crop, K, crop_size, dims):
    """Averaged 4-channel raster (coords / radius, inverse depth) before smoothing."""
    h, w = dims
    cam = pose.transform(model.points)
    front = cam[:, 2] > 1e-6
    cam, obj = cam[front], model.points[front]
    uv = np.stack([K.fx * cam[:, 0] / cam[:, 2] + K.cx, K.fy * cam[:, 1] / cam[:, 2] + K.cy], axis=1)
    p = (uv - crop.center) / crop.s_bbox * crop_size + crop_size / 2.0
    ix = np.floor(p[:, 0] * (w / crop_size)).astype(np.int64)
    iy = np.floor(p[:, 1] * (h / crop_size)).astype(np.int64)
    ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    radius = 0.5 * model.diameter
    feat = np.concatenate([obj[ok] / radius, 1.0 / cam[ok, 2:3]], axis=1)
    acc = np.zeros((h, w, 4))
    cnt = np.zeros((h, w))
    np.add.at(acc, (iy[ok], ix[ok]), feat)
    np.add.at(cnt, (iy[ok], ix[ok]), 1.0)
    hit = cnt > 0
    acc[hit] /= cnt[hit][:, None]
    return acc


def smooth(raster):
    """Separable [1/4, 1/2, 1/4] filter with zero padding."""
    pad = np.pad(raster, ((1, 1), (0, 0), (0, 0)))
    out = SMOOTH_TAPS[0] * pad[:-2] + SMOOTH_TAPS[1] * pad[1:-1] + SMOOTH_TAPS[2] * pad[2:]
    pad = np.pad(out, ((0, 0), (1, 1), (0, 0)))
    return SMOOTH_TAPS[0] * pad[:, :-2] + SMOOTH_TAPS[1] * pad[:, 1:-1] + SMOOTH_TAPS[2] * pad[:, 2:]


def mixing_matrix(channels, seed):
    if channels <= 4:
        return np.zeros((4, 0))
    return np.random.default_rng(seed).normal(0.0, 0.5, (4, channels - 4))


def render_feature_pyramid(model, pose, crop, K, config):
    M = mixing_matrix(config.channels, config.mix_seed)
    levels = []
    for dims in config.level_dims():
        base = smooth(splat_level(model, pose, crop, K, config.crop_size, dims))
        levels.append(np.concatenate([base, base @ M], axis=-1)[..., :config.channels])
    return FeaturePyramid(tuple(levels), config.crop_size)


# ---------------------------------------------------------------- scenes

def make_scene(model, config, seed):
    """Deterministic scene from ``seed``; rejects poses whose points leave
    1.5x the crop or fall behind the camera."""
    rng = np.random.default_rng(seed)
    K = config.intrinsics
    for _ in range(config.max_tries):
        pose = random_pose(rng, config.depth_range, (K, config.image_size, 0.15),
                           config.max_angle_deg, config.base_rotation)
        if np.any(pose.transform(model.points)[:, 2] <= 1e-6):
            continue
        crop = tight_crop(model, pose, K, config.s_image)
        crop = enlarge_bbox(dzi_perturb(crop, rng, config.dzi_shift, config.dzi_scale), config.enlarge)
        if within_crop(model, pose, K, crop):
            break
    else:
        raise RuntimeError(f"no valid scene after {config.max_tries} draws (seed {seed})")
    pyramid = render_feature_pyramid(model, pose, crop, K, config)
    return SynthScene(model, pose, crop, K, pyramid, seed)


def make_scenes(model, config, n, seed):
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, n)
    return [make_scene(model, config, int(s)) for s in seeds]


def dump_scene(scene, stem):
    """Write ``<stem>.pyr`` (pyramid file) and ``<stem>.json`` (sidecar)."""
    save_pyramid(f"{stem}.pyr", scene.pyramid)
    side = {
        "gt_pose": scene.gt_pose.to_json(),
        "crop": scene.crop.to_json(),
        "intrinsics": scene.K_cam.to_json(),
        "seed": scene.rng_seed,
    }
    with open(f"{stem}.json", "w") as f:
        json.dump(side, f, indent=1, sort_keys=True)


def scene_config_from(overrides):
    known = SceneConfig.__dataclass_fields__
    return replace(SceneConfig(), **{k: v for k, v in overrides.items() if k in known})
