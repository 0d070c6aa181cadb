"""Cascaded pose refinement over object-surface keypoint features.

A coarse head regresses an initial pose from a feature pyramid; each
refinement block samples features at the projected 3D keypoints, mixes
them with self-attention and multi-scale deformable attention, and
predicts a pose offset. Everything runs on numpy with a small reverse-mode
autodiff for training.
"""

from .errors import (BadWidth, BehindCamera, DegenerateDirection, DegenerateRotation, DivergenceDetected,
                     EmptyList, EmptyModel, FormatError, InvalidCrop, InvalidK, KeyMismatch, LengthMismatch,
                     OskfError, PlyError, TooFewPoints)
from .geometry import (CameraIntrinsics, CropFrame, Pose, PoseOffset, Rotation6D, SiteTranslation,
                       allo_to_ego, apply_pose_offset, back_project, ego_to_allo, project, project_keypoints,
                       recover_rotation, site_decode, site_encode)
from .keypoints import KeypointSet, ObjectModel, farthest_point_sample, read_ply
from .pyramid import FeaturePyramid, OskfSet, bilinear_sample, extract_oskf
from .refiner import RefinerConfig, RefinerParams, cascade, coarse_pose, refine_step

__version__ = "0.1.0"
