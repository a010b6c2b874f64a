"""Synthetic multi-view 2D/3D pose pair generation.

A sample is produced by drawing a canonical 3D pose (procedural kinematic
tree or an external pose library), placing its root in the scene, sampling
N look-at cameras inside a configured box, projecting every joint into
every view, and corrupting the projections with a parametric noise model
whose confidences correlate with the realized error.

Datasets are serialized as JSON-lines, one sample per line, calibration
embedded per view. Generation is deterministic given a seed: sample i uses
the independent stream ``np.random.default_rng([seed, i])``.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DatasetParseError,
    DegenerateGeometryError,
    InvalidInputError,
)
from .geometry import MIN_DEPTH, CameraCalib, project_many
from .skeleton import Pose2D, Pose3D, get_format

# Confidence of an occluded keypoint is conf_floor plus jitter in [0, this).
OCCLUSION_CONF_JITTER = 0.05


def _pair(value, n, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (2, n):
        raise ConfigError(f"{name} must be (min, max) {n}-vectors, got {arr.shape}")
    if np.any(arr[0] > arr[1]):
        raise ConfigError(f"{name} min exceeds max: {arr.tolist()}")
    return arr


@dataclass
class SceneConfig:
    """Placement limits for cameras and the person.

    Boxes are (min, max) corner pairs; a collapsed axis (min == max) pins
    that coordinate, which is how deterministic rigs are configured.
    """

    camera_box: np.ndarray = ((-6.0, -6.0, 1.6), (6.0, 6.0, 4.0))
    person_area: np.ndarray = ((-1.0, -1.0), (1.0, 1.0))
    height_range: tuple = (0.8, 1.2)       # pelvis z, meters
    focal_range: tuple = (900.0, 1400.0)   # pixels
    image_size: tuple = (1000, 1000)       # (width, height)
    look_at_jitter: float = 0.2            # meters
    min_views: int = 2
    max_views: int = 5

    def __post_init__(self):
        self.camera_box = _pair(self.camera_box, 3, "camera_box")
        self.person_area = _pair(self.person_area, 2, "person_area")
        self.height_range = (float(self.height_range[0]), float(self.height_range[1]))
        self.focal_range = (float(self.focal_range[0]), float(self.focal_range[1]))
        self.image_size = (int(self.image_size[0]), int(self.image_size[1]))
        if self.height_range[0] > self.height_range[1]:
            raise ConfigError("height_range min exceeds max")
        if self.focal_range[0] <= 0 or self.focal_range[1] < self.focal_range[0]:
            raise ConfigError("focal_range must be positive and ordered")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            raise ConfigError("image_size must be positive")
        if self.look_at_jitter < 0:
            raise ConfigError("look_at_jitter must be non-negative")
        if not (1 <= self.min_views <= self.max_views):
            raise ConfigError("need max_views >= min_views >= 1")


@dataclass
class NoiseModel:
    """Parametric 2D corruption standing in for a real detector's errors."""

    sigma_px: float = 3.0
    occlusion_prob: float = 0.05
    occlusion_sigma_px: float = 40.0
    conf_floor: float = 0.05

    def __post_init__(self):
        if self.sigma_px < 0 or self.occlusion_sigma_px < 0:
            raise ConfigError("noise scales must be non-negative")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ConfigError("occlusion_prob must lie in [0, 1]")
        if not 0.0 <= self.conf_floor < 1.0:
            raise ConfigError("conf_floor must lie in [0, 1)")


ZERO_NOISE = NoiseModel(sigma_px=0.0, occlusion_prob=0.0,
                        occlusion_sigma_px=0.0, conf_floor=0.0)


@dataclass
class Sample:
    gt: Pose3D
    views: list = field(default_factory=list)  # [(CameraCalib, Pose2D), ...]
    scene_id: str = ""

    def __post_init__(self):
        if len(self.views) < 1:
            raise InvalidInputError("a sample needs at least one view")
        for calib, pose2d in self.views:
            if pose2d.num_joints != self.gt.num_joints:
                raise InvalidInputError(
                    f"view keypoint count {pose2d.num_joints} != "
                    f"gt joint count {self.gt.num_joints}")

    @property
    def num_views(self):
        return len(self.views)


# ------------------------------------------------------------------- cameras


def look_at_rotation(position, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """World-to-camera rotation: +z toward target, image v downward.

    Rows of the result are the camera axes in world coordinates. Falls
    back to world x as "up" when the viewing direction is (anti)parallel
    to up (camera directly above/below the target).
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise DegenerateGeometryError("camera coincides with its target")
    z = forward / norm
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(-up, z)
    if np.linalg.norm(x) < 1e-8:
        x = np.cross(-np.array([1.0, 0.0, 0.0]), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def sample_camera(config: SceneConfig, target, rng) -> CameraCalib:
    """Draw a camera uniformly in the box, looking at (jittered) target."""
    box = config.camera_box
    T = rng.uniform(box[0], box[1])
    jitter = rng.uniform(-config.look_at_jitter, config.look_at_jitter, size=3)
    R = look_at_rotation(T, np.asarray(target, dtype=np.float64) + jitter)
    f = rng.uniform(*config.focal_range)
    w, h = config.image_size
    K = np.array([[f, 0.0, w / 2.0], [0.0, f, h / 2.0], [0.0, 0.0, 1.0]])
    return CameraCalib(K=K, R=R, T=T)


# --------------------------------------------------------------------- poses

# Kinematic tree over the h36m17 joint order: (parent, child) per bone.
H36M_EDGES = [
    (0, 1), (1, 2), (2, 3),      # pelvis - right leg
    (0, 4), (4, 5), (5, 6),      # pelvis - left leg
    (0, 7), (7, 8),              # spine: pelvis - torso - neck
    (8, 9), (9, 10),             # neck - nose - head
    (8, 11), (11, 12), (12, 13),  # left arm
    (8, 14), (14, 15), (15, 16),  # right arm
]

# Bone length ranges in meters, keyed by child-joint kind. Left/right pairs
# share one draw so the skeleton is symmetric.
BONE_RANGES = {
    "hip": (0.09, 0.13),
    "thigh": (0.36, 0.46),
    "shin": (0.35, 0.45),
    "spine_half": (0.22, 0.28),
    "nose": (0.10, 0.14),
    "head": (0.08, 0.12),
    "shoulder": (0.14, 0.19),
    "upper_arm": (0.25, 0.32),
    "forearm": (0.22, 0.28),
}


def _unit(v):
    return v / np.linalg.norm(v)


def _cone_direction(rng, axis, max_angle, *, azimuth=None):
    """Uniform direction within ``max_angle`` radians of ``axis``."""
    axis = _unit(np.asarray(axis, dtype=np.float64))
    cos_t = rng.uniform(np.cos(max_angle), 1.0)
    sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = rng.uniform(0.0, 2 * np.pi) if azimuth is None else azimuth
    # orthonormal frame around axis
    helper = np.array([1.0, 0.0, 0.0])
    if abs(axis[0]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = _unit(np.cross(axis, helper))
    e2 = np.cross(axis, e1)
    return cos_t * axis + sin_t * (np.cos(phi) * e1 + np.sin(phi) * e2)


def _procedural_pose(rng, bone_ranges) -> Pose3D:
    """Random plausible skeleton: root at origin, randomized joint angles."""
    L = {k: rng.uniform(*v) for k, v in bone_ranges.items()}
    up = np.array([0.0, 0.0, 1.0])
    yaw = rng.uniform(0.0, 2 * np.pi)
    facing = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    lateral = np.array([-np.sin(yaw), np.cos(yaw), 0.0])  # person's left

    j = np.zeros((17, 3))
    # spine is a single sampled direction; torso sits at its midpoint
    spine_dir = _cone_direction(rng, up, np.deg2rad(25.0))
    j[8] = j[0] + 2.0 * L["spine_half"] * spine_dir       # neck
    j[7] = 0.5 * (j[0] + j[8])                            # torso

    hip_axis = _unit(lateral + rng.normal(scale=0.08, size=3))
    j[4] = j[0] + L["hip"] * hip_axis                     # left hip
    j[1] = j[0] - L["hip"] * hip_axis                     # right hip
    for hip, knee, ankle in ((4, 5, 6), (1, 2, 3)):
        thigh_dir = _cone_direction(rng, -up, np.deg2rad(45.0))
        j[knee] = j[hip] + L["thigh"] * thigh_dir
        shin_dir = _cone_direction(rng, thigh_dir, np.deg2rad(45.0))
        j[ankle] = j[knee] + L["shin"] * shin_dir

    shoulder_axis = _unit(lateral + rng.normal(scale=0.08, size=3))
    j[11] = j[8] + L["shoulder"] * shoulder_axis          # left shoulder
    j[14] = j[8] - L["shoulder"] * shoulder_axis          # right shoulder
    for sho, elb, wri in ((11, 12, 13), (14, 15, 16)):
        upper_dir = _cone_direction(rng, -up, np.deg2rad(80.0))
        j[elb] = j[sho] + L["upper_arm"] * upper_dir
        fore_dir = _cone_direction(rng, upper_dir, np.deg2rad(70.0))
        j[wri] = j[elb] + L["forearm"] * fore_dir

    j[9] = j[8] + L["nose"] * _cone_direction(
        rng, _unit(up + 0.45 * facing), np.deg2rad(15.0))  # nose
    j[10] = j[9] + L["head"] * _cone_direction(
        rng, _unit(up - 0.3 * facing), np.deg2rad(15.0))   # head
    return Pose3D(joints=j)


def load_pose_library(path) -> np.ndarray:
    """Load a (P, 17, 3) pose array from a .npy or .json file."""
    path = Path(path)
    if path.suffix == ".npy":
        poses = np.load(path)
    else:
        with open(path) as f:
            poses = np.asarray(json.load(f), dtype=np.float64)
    poses = np.asarray(poses, dtype=np.float64)
    if poses.ndim == 2:
        poses = poses[None]
    if poses.ndim != 3 or poses.shape[2] != 3 or poses.shape[0] == 0:
        raise InvalidInputError(
            f"pose library must be a non-empty (P, M, 3) array, got {poses.shape}")
    return poses


def sample_pose(library, rng, bone_ranges=None) -> Pose3D:
    """Draw one canonical pose (root joint at the origin).

    ``library`` may be None (procedural generator), a (P, M, 3) array /
    list of poses, or a path to a .npy/.json file of poses.
    """
    if library is None:
        return _procedural_pose(rng, bone_ranges or BONE_RANGES)
    if isinstance(library, (str, Path)):
        library = load_pose_library(library)
    poses = np.asarray(library, dtype=np.float64)
    if poses.ndim != 3 or poses.shape[0] == 0 or poses.shape[2] != 3:
        raise InvalidInputError(
            f"pose library must be a non-empty (P, M, 3) array, got {poses.shape}")
    joints = poses[rng.integers(poses.shape[0])]
    return Pose3D(joints=joints - joints[0])


def bone_lengths(pose, edges=H36M_EDGES) -> np.ndarray:
    """Per-bone Euclidean lengths in meters."""
    j = pose.joints if isinstance(pose, Pose3D) else np.asarray(pose)
    return np.array([np.linalg.norm(j[c] - j[p]) for p, c in edges])


# ---------------------------------------------------------------- corruption


def corrupt_2d(pixels, noise: NoiseModel, rng) -> Pose2D:
    """Add detector-style noise; confidence tracks the realized error.

    Occluded keypoints (probability occlusion_prob) get large noise and a
    near-floor confidence. Others get Gaussian noise of scale sigma_px and
    confidence exp(-|noise| / sigma_px), so bigger errors score lower.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    m = pixels.shape[0]
    occluded = rng.uniform(size=m) < noise.occlusion_prob
    scale = np.where(occluded, noise.occlusion_sigma_px, noise.sigma_px)
    offsets = rng.normal(size=(m, 2)) * scale[:, None]
    err = np.linalg.norm(offsets, axis=1)
    if noise.sigma_px > 0:
        conf = np.clip(np.exp(-err / noise.sigma_px), noise.conf_floor, 1.0)
    else:
        conf = np.ones(m)
    conf_occ = noise.conf_floor + rng.uniform(0.0, OCCLUSION_CONF_JITTER, size=m)
    conf = np.where(occluded, np.clip(conf_occ, 0.0, 1.0), conf)
    return Pose2D(pixels=pixels + offsets, conf=conf)


# ---------------------------------------------------------------- generation


def generate_sample(config: SceneConfig, library, noise: NoiseModel, rng,
                    scene_id: str = "scene_0", cameras=None) -> Sample:
    """Generate one multi-view sample.

    ``cameras`` overrides camera sampling with an explicit rig (used by the
    evaluation harness for fixed geometries); otherwise N ~ U[min_views,
    max_views] cameras are drawn. Joints behind a camera are recorded with
    confidence 0 and sentinel pixel (0, 0).
    """
    canonical = sample_pose(library, rng)
    root = np.append(rng.uniform(config.person_area[0], config.person_area[1]),
                     rng.uniform(*config.height_range))
    joints = canonical.joints + root
    if cameras is None:
        n = int(rng.integers(config.min_views, config.max_views + 1))
        cameras = [sample_camera(config, root, rng) for _ in range(n)]
    views = []
    for calib in cameras:
        clean, depths = project_many(joints, calib)
        pose2d = corrupt_2d(clean, noise, rng)
        behind = depths <= MIN_DEPTH
        if behind.any():
            px = pose2d.pixels.copy()
            cf = pose2d.conf.copy()
            px[behind] = 0.0
            cf[behind] = 0.0
            pose2d = Pose2D(pixels=px, conf=cf)
        views.append((calib, pose2d))
    return Sample(gt=Pose3D(joints=joints), views=views, scene_id=scene_id)


def generate_dataset(config: SceneConfig, noise: NoiseModel, num_samples: int,
                     seed: int, library=None):
    """Deterministic dataset: sample i comes from rng([seed, i])."""
    if num_samples < 0:
        raise InvalidInputError("num_samples must be non-negative")
    samples = []
    for i in range(num_samples):
        rng = np.random.default_rng([seed, i])
        samples.append(generate_sample(config, library, noise, rng,
                                       scene_id=f"scene_{i:06d}"))
    return samples


def translate_sample(sample: Sample, offset) -> Sample:
    """Rigidly translate a scene: gt joints and camera centers move together.

    The 2D observations are untouched; they are geometrically identical
    because x_cam = R @ (X - T) is translation-invariant when X and T move
    by the same offset.
    """
    offset = np.asarray(offset, dtype=np.float64).reshape(3)
    views = [
        (CameraCalib(K=c.K, R=c.R, T=c.T + offset), p) for c, p in sample.views
    ]
    return Sample(gt=Pose3D(joints=sample.gt.joints + offset), views=views,
                  scene_id=sample.scene_id)


# -------------------------------------------------------------- serialization


def sample_to_dict(sample: Sample) -> dict:
    return {
        "scene_id": sample.scene_id,
        "gt": sample.gt.joints.tolist(),
        "views": [
            {
                "K": calib.K.tolist(),
                "R": calib.R.tolist(),
                "T": calib.T.tolist(),
                "pose2d": pose2d.pixels.tolist(),
                "conf": pose2d.conf.tolist(),
            }
            for calib, pose2d in sample.views
        ],
    }


def sample_from_dict(d: dict) -> Sample:
    views = [
        (CameraCalib(K=np.array(v["K"]), R=np.array(v["R"]), T=np.array(v["T"])),
         Pose2D(pixels=np.array(v["pose2d"]), conf=np.array(v["conf"])))
        for v in d["views"]
    ]
    return Sample(gt=Pose3D(joints=np.array(d["gt"])), views=views,
                  scene_id=d["scene_id"])


def write_dataset(samples, path):
    """One sample per line; float repr preserves full precision."""
    path = Path(path)
    with open(path, "w") as f:
        for sample in samples:
            f.write(json.dumps(sample_to_dict(sample), sort_keys=True))
            f.write("\n")


def iter_dataset(path):
    """Stream samples one record at a time."""
    with open(path) as f:
        for i, line in enumerate(f):
            if not line.strip():
                continue
            try:
                yield sample_from_dict(json.loads(line))
            except Exception as e:
                raise DatasetParseError(
                    f"bad record at line {i + 1} (last complete record: "
                    f"{i})") from e


def read_dataset(path):
    return list(iter_dataset(path))
