"""Keypoint formats, cross-format merging, and the MPJPE metric.

Two built-in 17-joint formats are provided. "coco17" is the order produced
by common 2D pose estimators. "h36m17" is the order used for 3D poses
throughout this package; it is derived from coco17 by averaging groups of
source keypoints (head from ears+eyes, pelvis from hips, neck from
shoulders, torso from neck+pelvis).

World coordinates are meters everywhere; MPJPE converts to millimeters at
the reporting boundary and nowhere else.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

COCO17_NAMES = [
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
]

H36M17_NAMES = [
    "pelvis", "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "torso", "neck", "nose", "head",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
]

# Joints whose 2D and 3D definitions agree across both formats: knees,
# ankles, shoulders, elbows, wrists.
_KP_STAR_NAMES = frozenset(
    f"{side}_{part}"
    for side in ("left", "right")
    for part in ("knee", "ankle", "shoulder", "elbow", "wrist")
)

# How each h36m17 joint is built from coco17 sources (uniform average).
H36M_FROM_COCO = [
    ("pelvis", ["left_hip", "right_hip"]),
    ("right_hip", ["right_hip"]),
    ("right_knee", ["right_knee"]),
    ("right_ankle", ["right_ankle"]),
    ("left_hip", ["left_hip"]),
    ("left_knee", ["left_knee"]),
    ("left_ankle", ["left_ankle"]),
    # torso = midpoint of neck and pelvis; neck itself is the shoulder
    # midpoint (coco17 has no neck), so torso averages four sources.
    ("torso", ["left_shoulder", "right_shoulder", "left_hip", "right_hip"]),
    ("neck", ["left_shoulder", "right_shoulder"]),
    ("nose", ["nose"]),
    ("head", ["left_ear", "right_ear", "left_eye", "right_eye"]),
    ("left_shoulder", ["left_shoulder"]),
    ("left_elbow", ["left_elbow"]),
    ("left_wrist", ["left_wrist"]),
    ("right_shoulder", ["right_shoulder"]),
    ("right_elbow", ["right_elbow"]),
    ("right_wrist", ["right_wrist"]),
]


@dataclass
class SkeletonFormat:
    name: str
    names: list
    kp_star_mask: np.ndarray
    merge_rules: list = field(default_factory=list)

    @property
    def num_joints(self):
        return len(self.names)

    def index(self, joint_name: str) -> int:
        return self.names.index(joint_name)


def _make_format(name, names, merge_rules=()):
    mask = np.array([n in _KP_STAR_NAMES for n in names], dtype=bool)
    return SkeletonFormat(name=name, names=list(names), kp_star_mask=mask,
                          merge_rules=list(merge_rules))


FORMATS = {
    "coco17": _make_format("coco17", COCO17_NAMES),
    "h36m17": _make_format("h36m17", H36M17_NAMES, H36M_FROM_COCO),
}


def get_format(name: str) -> SkeletonFormat:
    try:
        return FORMATS[name]
    except KeyError:
        raise InvalidInputError(
            f"unknown skeleton format {name!r}; available: {sorted(FORMATS)}"
        ) from None


def kp_star_mask(fmt) -> np.ndarray:
    """Boolean mask selecting the format-consistent joint subset."""
    if isinstance(fmt, str):
        fmt = get_format(fmt)
    return fmt.kp_star_mask.copy()


@dataclass
class Pose2D:
    """Pixel keypoints with per-keypoint confidences in [0, 1]."""

    pixels: np.ndarray  # (M, 2)
    conf: np.ndarray    # (M,)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.conf = np.asarray(self.conf, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.shape[1] != 2:
            raise InvalidInputError(f"pixels must be (M, 2), got {self.pixels.shape}")
        if self.conf.shape != (self.pixels.shape[0],):
            raise InvalidInputError(
                f"conf must be (M,) matching pixels, got {self.conf.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise InvalidInputError("pixels must be finite")
        if not np.all(np.isfinite(self.conf)):
            raise InvalidInputError("conf must be finite")
        if np.any(self.conf < 0) or np.any(self.conf > 1):
            raise InvalidInputError("conf must lie in [0, 1]")

    @property
    def num_joints(self):
        return self.pixels.shape[0]


@dataclass
class Pose3D:
    """World-coordinate joints in meters."""

    joints: np.ndarray  # (M, 3)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 2 or self.joints.shape[1] != 3:
            raise InvalidInputError(f"joints must be (M, 3), got {self.joints.shape}")
        if not np.all(np.isfinite(self.joints)):
            raise InvalidInputError("joints must be finite")

    @property
    def num_joints(self):
        return self.joints.shape[0]


def _as_joints(pose) -> np.ndarray:
    if isinstance(pose, Pose3D):
        return pose.joints
    return np.asarray(pose, dtype=np.float64)


def mpjpe(q, q_hat, mask=None) -> float:
    """Mean per-joint position error in millimeters.

    ``q`` and ``q_hat`` are (M, 3) poses in meters (arrays or Pose3D).
    ``mask`` optionally restricts the mean to a joint subset.
    """
    a = _as_joints(q)
    b = _as_joints(q_hat)
    if a.shape != b.shape:
        raise InvalidInputError(f"pose shapes differ: {a.shape} vs {b.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (a.shape[0],):
            raise InvalidInputError(
                f"mask must be (M,) = ({a.shape[0]},), got {mask.shape}")
        if not mask.any():
            raise InvalidInputError("mask selects no joints")
        a = a[mask]
        b = b[mask]
    dists = np.linalg.norm(a - b, axis=1)
    return float(dists.mean() * 1000.0)


def coco_to_h36m_merge(pose):
    """Convert a coco17 pose (2D or 3D) to h36m17 by averaging sources.

    The confidence of a merged 2D joint is the minimum of its sources'
    confidences: a merged joint is only as reliable as its weakest input.
    """
    fmt = FORMATS["h36m17"]
    coco = FORMATS["coco17"]
    src_indices = [
        [coco.index(s) for s in sources] for _, sources in fmt.merge_rules
    ]
    if isinstance(pose, Pose2D):
        if pose.num_joints != coco.num_joints:
            raise InvalidInputError(
                f"expected {coco.num_joints} coco17 keypoints, got {pose.num_joints}")
        pixels = np.stack([pose.pixels[idx].mean(axis=0) for idx in src_indices])
        conf = np.array([pose.conf[idx].min() for idx in src_indices])
        return Pose2D(pixels=pixels, conf=conf)
    if isinstance(pose, Pose3D):
        if pose.num_joints != coco.num_joints:
            raise InvalidInputError(
                f"expected {coco.num_joints} coco17 joints, got {pose.num_joints}")
        joints = np.stack([pose.joints[idx].mean(axis=0) for idx in src_indices])
        return Pose3D(joints=joints)
    raise InvalidInputError(f"expected Pose2D or Pose3D, got {type(pose).__name__}")
