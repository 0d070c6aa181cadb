"""Pose parameterizations, pinhole projection and the pose-update algebra.

Conventions: rotations are 3x3 float64 arrays acting on column vectors,
translations are in meters in the camera frame, image coordinates are
pixels. The 6D rotation parameterization stores the first two columns of
the rotation matrix (before orthonormalization).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCamera,
    DegenerateDirection,
    DegenerateRotation,
    InvalidCrop,
)


@dataclass(frozen=True)
class Tolerances:
    degenerate: float = 1e-8
    near_plane: float = 1e-6
    direction: float = 1e-8


TOL = Tolerances()

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def transform(self, points):
        return np.asarray(points) @ self.rotation.T + self.translation

    def is_valid(self, tol=1e-9):
        return is_rotation(self.rotation, tol) and self.translation[2] > 0

    def to_json(self):
        return {"R": self.rotation.tolist(), "t": self.translation.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["R"], dtype=np.float64).reshape(3, 3), obj["t"])


@dataclass(frozen=True)
class Rotation6D:
    r1: np.ndarray
    r2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "r1", np.asarray(self.r1, dtype=np.float64).reshape(3))
        object.__setattr__(self, "r2", np.asarray(self.r2, dtype=np.float64).reshape(3))

    def as_array(self):
        return np.concatenate([self.r1, self.r2])

    @classmethod
    def from_array(cls, v):
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:3], v[3:6])

    @classmethod
    def identity(cls):
        return cls.from_array(IDENTITY_6D)

    @classmethod
    def from_matrix(cls, R):
        R = np.asarray(R, dtype=np.float64)
        return cls(R[:, 0], R[:, 1])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def as_array(self):
        return np.array([self.fx, self.fy, self.cx, self.cy])

    def to_json(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_json(cls, obj):
        return cls(float(obj["fx"]), float(obj["fy"]), float(obj["cx"]), float(obj["cy"]))


@dataclass(frozen=True)
class CropFrame:
    """Square crop around a detection.

    ``s_bbox`` is the crop edge in image pixels, ``s_image`` the reference
    image size the depth encoding is normalized by.
    """

    center: np.ndarray
    s_bbox: float
    s_image: float
    width: float = None
    height: float = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(2))
        if self.width is None:
            object.__setattr__(self, "width", float(self.s_bbox))
        if self.height is None:
            object.__setattr__(self, "height", float(self.s_bbox))

    @classmethod
    def from_bbox(cls, center, width, height, s_image):
        return cls(center, float(max(width, height)), float(s_image), float(width), float(height))

    @property
    def ratio(self):
        return self.s_bbox / self.s_image

    def validate(self):
        if not (self.s_bbox > 0) or not np.isfinite(self.s_bbox):
            raise InvalidCrop(f"s_bbox must be positive, got {self.s_bbox}")
        if not (self.s_image > 0) or not np.isfinite(self.s_image):
            raise InvalidCrop(f"s_image must be positive, got {self.s_image}")
        if not np.all(np.isfinite(self.center)):
            raise InvalidCrop("crop center is not finite")
        return self

    def is_valid(self, tol=1e-9):
        try:
            self.validate()
        except InvalidCrop:
            return False
        return abs(self.s_bbox - max(self.width, self.height)) <= tol * max(1.0, self.s_bbox)

    def scaled(self, factor, center=None):
        c = self.center if center is None else center
        return CropFrame(c, self.s_bbox * factor, self.s_image, self.width * factor, self.height * factor)

    def to_json(self):
        return {
            "center": self.center.tolist(),
            "s_bbox": self.s_bbox,
            "s_image": self.s_image,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, obj):
        return cls(obj["center"], obj["s_bbox"], obj["s_image"], obj.get("width"), obj.get("height"))


@dataclass(frozen=True)
class SiteTranslation:
    gamma_x: float
    gamma_y: float
    gamma_z: float

    def as_array(self):
        return np.array([self.gamma_x, self.gamma_y, self.gamma_z])

    @classmethod
    def from_array(cls, v):
        return cls(float(v[0]), float(v[1]), float(v[2]))


@dataclass(frozen=True)
class PoseOffset:
    delta_rotation: Rotation6D
    delta_gamma: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "delta_gamma", np.asarray(self.delta_gamma, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls):
        return cls(Rotation6D.identity(), np.zeros(3))

    @classmethod
    def from_array(cls, v):
        v = np.asarray(v, dtype=np.float64)
        return cls(Rotation6D.from_array(v[:6]), v[6:9])


def is_rotation(R, tol=1e-9):
    R = np.asarray(R, dtype=np.float64)
    ortho = np.abs(R.T @ R - np.eye(3)).max()
    return bool(ortho < tol and abs(np.linalg.det(R) - 1.0) < tol)


# ---------------------------------------------------------------- rotation

def recover_rotation(repr6d, tol=TOL):
    """Rotation matrix from the 6D parameterization.

    Accepts a :class:`Rotation6D` or an array whose last axis has length 6
    (batched input is supported). Columns are ``normalize(r1)``,
    ``R3 x R1`` and ``normalize(R1 x r2)``.
    """
    if isinstance(repr6d, Rotation6D):
        v = repr6d.as_array()
    else:
        v = np.asarray(repr6d, dtype=np.float64)
    r1, r2 = v[..., 0:3], v[..., 3:6]
    n1 = np.linalg.norm(r1, axis=-1, keepdims=True)
    if np.any(n1 <= tol.degenerate):
        raise DegenerateRotation(f"|r1| <= {tol.degenerate}")
    c = np.cross(r1, r2)
    if np.any(np.linalg.norm(c, axis=-1) <= tol.degenerate):
        raise DegenerateRotation(f"|r1 x r2| <= {tol.degenerate}")
    R1 = r1 / n1
    R3 = np.cross(R1, r2)
    R3 = R3 / np.linalg.norm(R3, axis=-1, keepdims=True)
    R2 = np.cross(R3, R1)
    return np.stack([R1, R2, R3], axis=-1)


def axis_angle_matrix(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def geodesic_angle(Ra, Rb):
    """Angle in radians of the relative rotation ``Ra^T Rb``.

    Same value as ``arccos((trace - 1) / 2)`` clamped, but computed with
    atan2 so it keeps full precision near 0 and pi.
    """
    M = np.asarray(Ra).T @ np.asarray(Rb)
    c = (np.trace(M) - 1.0) / 2.0
    s = 0.5 * np.linalg.norm([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
    return float(np.arctan2(s, c))


# ---------------------------------------------------------------- translation

def site_encode(object_center_2d, t_z, crop):
    crop.validate()
    O = np.asarray(object_center_2d, dtype=np.float64)
    gx, gy = (O - crop.center) / crop.s_bbox
    return SiteTranslation(float(gx), float(gy), float(t_z / crop.ratio))


def site_decode(site, crop):
    crop.validate()
    g = np.array([site.gamma_x, site.gamma_y])
    O = crop.center + g * crop.s_bbox
    return O, site.gamma_z * crop.ratio


def back_project(O, t_z, K):
    O = np.asarray(O, dtype=np.float64)
    return t_z * np.array([(O[0] - K.cx) / K.fx, (O[1] - K.cy) / K.fy, 1.0])


def project(point_cam, K, tol=TOL):
    p = np.asarray(point_cam, dtype=np.float64)
    if p[2] <= tol.near_plane:
        raise BehindCamera(f"point depth {p[2]} <= {tol.near_plane}")
    return np.array([K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy])


def project_keypoints(keypoints, pose, K, tol=TOL):
    pts = pose.transform(np.asarray(keypoints, dtype=np.float64).reshape(-1, 3))
    bad = np.nonzero(pts[:, 2] <= tol.near_plane)[0]
    if bad.size:
        i = int(bad[0])
        raise BehindCamera(f"keypoint {i} has depth {pts[i, 2]}", index=i)
    u = K.fx * pts[:, 0] / pts[:, 2] + K.cx
    v = K.fy * pts[:, 1] / pts[:, 2] + K.cy
    return np.stack([u, v], axis=1)


# ---------------------------------------------------------------- allocentric

def view_rotation(t, tol=TOL):
    """Smallest rotation taking the optical axis (0, 0, 1) onto ``t / |t|``."""
    t = np.asarray(t, dtype=np.float64)
    n = np.linalg.norm(t)
    if n <= 0:
        raise DegenerateDirection("zero translation has no viewing direction")
    d = t / n
    c = d[2]
    if 1.0 + c <= tol.direction:
        raise DegenerateDirection("viewing ray antiparallel to the optical axis")
    v = np.array([-d[1], d[0], 0.0])  # z x d
    V = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + V + (V @ V) / (1.0 + c)


def allo_to_ego(allocentric, t, tol=TOL):
    return view_rotation(t, tol) @ np.asarray(allocentric, dtype=np.float64)


def ego_to_allo(egocentric, t, tol=TOL):
    return view_rotation(t, tol).T @ np.asarray(egocentric, dtype=np.float64)


# ---------------------------------------------------------------- pose state

def apply_pose_offset(prev, offset, tol=TOL):
    """One refinement update on the internal ``(R, site)`` state.

    Rotation composes on the left, the 2D centre moves additively in crop
    units and depth is rescaled by ``1 + tanh(dz)``, which stays in (0, 2).
    """
    R_prev, site = prev
    dR = recover_rotation(offset.delta_rotation, tol)
    d = offset.delta_gamma
    new_site = SiteTranslation(
        site.gamma_x + float(d[0]),
        site.gamma_y + float(d[1]),
        site.gamma_z * (1.0 + float(np.tanh(d[2]))),
    )
    return dR @ np.asarray(R_prev, dtype=np.float64), new_site


def decode_pose(rotation, site, crop, K):
    O, t_z = site_decode(site, crop)
    return Pose(rotation, back_project(O, t_z, K))


def encode_pose(pose, crop, K):
    """Internal ``(R, site)`` state of a metric pose under a crop."""
    O = project(pose.translation, K)
    return pose.rotation.copy(), site_encode(O, pose.translation[2], crop)


def crop_pixels(points_2d, crop, crop_size):
    """Image pixels -> pixels of the resampled ``crop_size`` square crop."""
    p = np.asarray(points_2d, dtype=np.float64)
    return (p - crop.center) / crop.s_bbox * crop_size + crop_size / 2.0
