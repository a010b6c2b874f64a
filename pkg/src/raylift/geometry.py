"""Pinhole camera math: projection, pixel-to-ray lifting, DLT triangulation,
and epipolar distances.

PROJECTION CONVENTION
    A world point X (meters) maps into camera i as

        x_cam = R @ (X - T)
        pixel = dehomogenize(K @ x_cam)

    where R rotates world directions into the camera frame (rows of R are
    the camera axes expressed in world coordinates) and T is the camera
    center in world coordinates. Depth is the third component of x_cam and
    must be positive for visible points.

    The inverse map sends pixel p to the world-space ray

        origin    = T
        direction = R.T @ inv(K) @ [u, v, 1]

    Directions are deliberately left unnormalized: their magnitude encodes
    where the pixel sits in the field of view. ``pixels_to_rays`` accepts a
    ``normalize`` flag for experiments, default off.

IMAGE CONVENTION
    u grows rightward, v grows downward, origin at the top-left corner;
    K is upper-triangular with K[2,2] = 1 (skew permitted).
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    BehindCameraError,
    CalibrationError,
    DegenerateGeometryError,
    InsufficientViewsError,
    InvalidInputError,
)
from .skeleton import Pose2D

ORTHONORMALITY_TOL = 1e-9
MIN_DEPTH = 1e-9
MIN_DIRECTION_NORM = 1e-12
# Ratio of the second-smallest to largest singular value of the DLT system
# below which the solution is not unique.
DEGENERACY_RATIO = 1e-10


@dataclass
class CameraCalib:
    """Pinhole camera: intrinsics K, rotation R (world-to-camera), center T."""

    K: np.ndarray  # (3, 3), pixels
    R: np.ndarray  # (3, 3)
    T: np.ndarray  # (3,), world meters

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64)
        self.R = np.asarray(self.R, dtype=np.float64)
        self.T = np.asarray(self.T, dtype=np.float64).reshape(3)
        if self.K.shape != (3, 3) or self.R.shape != (3, 3):
            raise CalibrationError("K and R must be 3x3")
        if not (np.all(np.isfinite(self.K)) and np.all(np.isfinite(self.R))
                and np.all(np.isfinite(self.T))):
            raise CalibrationError("calibration values must be finite")
        lower = np.array([self.K[1, 0], self.K[2, 0], self.K[2, 1]])
        if np.any(lower != 0.0):
            raise CalibrationError("K must be upper-triangular")
        if self.K[2, 2] != 1.0:
            raise CalibrationError("K[2,2] must be 1")
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise CalibrationError("focal lengths must be positive")
        if np.abs(self.R @ self.R.T - np.eye(3)).max() > ORTHONORMALITY_TOL:
            raise CalibrationError("R is not orthonormal")
        if abs(np.linalg.det(self.R) - 1.0) > ORTHONORMALITY_TOL:
            raise CalibrationError("R must have determinant +1")

    def to_dict(self):
        return {"K": self.K.tolist(), "R": self.R.tolist(), "T": self.T.tolist()}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(K=np.array(d["K"]), R=np.array(d["R"]), T=np.array(d["T"]))
        except KeyError as e:
            raise CalibrationError(f"calibration dict missing key {e}") from None


@dataclass
class Ray:
    """World-space line through ``origin`` along (unnormalized) ``direction``."""

    origin: np.ndarray     # (3,)
    direction: np.ndarray  # (3,)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(self.origin)) and np.all(np.isfinite(self.direction))):
            raise InvalidInputError("ray components must be finite")
        if np.linalg.norm(self.direction) <= MIN_DIRECTION_NORM:
            raise InvalidInputError("ray direction must be nonzero")


def to_homogeneous(pixels: np.ndarray) -> np.ndarray:
    """Append a unit coordinate: (M, 2) pixels -> (M, 3)."""
    p = np.asarray(pixels, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise InvalidInputError(f"pixels must be (M, 2), got {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidInputError("pixels must be finite")
    return np.concatenate([p, np.ones((p.shape[0], 1))], axis=1)


def pixels_to_rays(pixels: np.ndarray, calib: CameraCalib,
                   normalize: bool = False) -> np.ndarray:
    """Lift pixels to world-space rays.

    Returns an (M, 6) array whose rows are [origin | direction] with
    origin = T and direction = R.T @ inv(K) @ [u, v, 1].
    """
    hom = to_homogeneous(pixels)
    try:
        k_inv = np.linalg.inv(calib.K)
    except np.linalg.LinAlgError:
        raise CalibrationError("K is singular") from None
    directions = (calib.R.T @ (k_inv @ hom.T)).T
    if normalize:
        directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
    origins = np.broadcast_to(calib.T, directions.shape)
    return np.concatenate([origins, directions], axis=1)


def ray_from_row(row) -> Ray:
    """Build a Ray from one (6,) row of a ray set."""
    row = np.asarray(row, dtype=np.float64).reshape(6)
    return Ray(origin=row[:3], direction=row[3:])


def project(point: np.ndarray, calib: CameraCalib) -> np.ndarray:
    """Project one world point to pixels; raises if at or behind the camera."""
    x = np.asarray(point, dtype=np.float64).reshape(3)
    x_cam = calib.R @ (x - calib.T)
    depth = x_cam[2]
    if depth <= MIN_DEPTH:
        raise BehindCameraError(f"point depth {depth:.3g} <= {MIN_DEPTH}")
    uvw = calib.K @ x_cam
    return uvw[:2] / depth


def project_many(points: np.ndarray, calib: CameraCalib):
    """Project (M, 3) world points; returns ((M, 2) pixels, (M,) depths).

    Does not raise for points behind the camera: their depth is reported
    as-is and the pixel row is the sentinel (0, 0). Callers decide how to
    treat them (the dataset generator marks them confidence 0).
    """
    pts = np.asarray(points, dtype=np.float64)
    x_cam = (calib.R @ (pts - calib.T).T).T
    depths = x_cam[:, 2]
    in_front = depths > MIN_DEPTH
    uvw = (calib.K @ x_cam.T).T
    pixels = np.zeros((pts.shape[0], 2))
    pixels[in_front] = uvw[in_front, :2] / depths[in_front, None]
    return pixels, depths


def projection_matrix(calib: CameraCalib) -> np.ndarray:
    """3x4 matrix P with P @ [X; 1] ~ pixel for the convention above."""
    return calib.K @ np.concatenate(
        [calib.R, -(calib.R @ calib.T).reshape(3, 1)], axis=1)


def triangulate_dlt(views, weights=None) -> np.ndarray:
    """Triangulate one world point from >= 2 (pixel, calib) observations.

    Stacks the two cross-product constraint rows per view, scales each
    view's rows by its weight, and takes the SVD null vector. Views with
    weight 0 are excluded entirely.
    """
    if weights is None:
        weights = [1.0] * len(views)
    if len(weights) != len(views):
        raise InvalidInputError("one weight per view required")
    weights = [float(w) for w in weights]
    if any(w < 0 for w in weights):
        raise InvalidInputError("weights must be non-negative")

    rows = []
    for (pixel, calib), w in zip(views, weights):
        if w == 0.0:
            continue
        u, v = np.asarray(pixel, dtype=np.float64).reshape(2)
        P = projection_matrix(calib)
        rows.append(w * (u * P[2] - P[0]))
        rows.append(w * (v * P[2] - P[1]))
    if len(rows) < 4:
        raise InsufficientViewsError(
            f"need >= 2 views with positive weight, got {len(rows) // 2}")

    A = np.stack(rows)
    _, s, vt = np.linalg.svd(A)
    # A has a one-dimensional null space for a well-posed problem; if the
    # second-smallest singular value also (nearly) vanishes the solution
    # is not unique.
    if s[2] < DEGENERACY_RATIO * s[0]:
        raise DegenerateGeometryError(
            f"rank-deficient triangulation system (s2/s0 = {s[2] / s[0]:.3g})")
    X = vt[-1]
    if abs(X[3]) < 1e-12 * np.linalg.norm(X):
        raise DegenerateGeometryError("triangulated point at infinity")
    return X[:3] / X[3]


def triangulate_batch(pixels, K, R, T, weights=None):
    """Vectorized DLT over B independent points.

    pixels: (B, N, 2); K, R: (B, N, 3, 3); T: (B, N, 3);
    weights: (B, N) or None. Returns ((B, 3) points, (B,) valid mask).
    Invalid entries (rank-deficient or < 2 usable views) are zero-filled
    with valid=False instead of raising; batch callers filter on the mask.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    B, N = pixels.shape[:2]
    if weights is None:
        weights = np.ones((B, N))
    weights = np.asarray(weights, dtype=np.float64)

    # P = K [R | -R T] per (point, view)
    RT = np.einsum("bnij,bnj->bni", R, T)
    P = np.einsum("bnij,bnjk->bnik", K,
                  np.concatenate([R, -RT[..., None]], axis=-1))
    u = pixels[..., 0][..., None]
    v = pixels[..., 1][..., None]
    row_u = u * P[:, :, 2, :] - P[:, :, 0, :]
    row_v = v * P[:, :, 2, :] - P[:, :, 1, :]
    A = np.concatenate([row_u * weights[..., None], row_v * weights[..., None]],
                       axis=1)  # (B, 2N, 4)

    usable = (weights > 0).sum(axis=1)
    out = np.zeros((B, 3))
    valid = usable >= 2
    if not valid.any():
        return out, valid
    _, s, vt = np.linalg.svd(A[valid])
    ok = s[:, 2] >= DEGENERACY_RATIO * s[:, 0]
    X = vt[:, -1, :]
    w_comp = X[:, 3]
    ok &= np.abs(w_comp) >= 1e-12 * np.linalg.norm(X, axis=1)
    pts = np.zeros((ok.shape[0], 3))
    pts[ok] = X[ok, :3] / w_comp[ok, None]
    out[valid] = pts
    mask = valid.copy()
    mask[valid] = ok
    return out, mask


def point_ray_distance(point: np.ndarray, ray) -> float:
    """Euclidean distance from a point to the infinite line of a ray."""
    if not isinstance(ray, Ray):
        ray = ray_from_row(ray)
    x = np.asarray(point, dtype=np.float64).reshape(3)
    d = ray.direction / np.linalg.norm(ray.direction)
    rel = x - ray.origin
    rejection = rel - (rel @ d) * d
    return float(np.linalg.norm(rejection))


def fundamental_matrix(calib_a: CameraCalib, calib_b: CameraCalib) -> np.ndarray:
    """Fundamental matrix F with x_b.T @ F @ x_a = 0 for matched pixels."""
    baseline = np.linalg.norm(calib_a.T - calib_b.T)
    if baseline < 1e-12:
        raise DegenerateGeometryError("coincident camera centers")
    r_rel = calib_b.R @ calib_a.R.T
    t_rel = calib_b.R @ (calib_a.T - calib_b.T)
    tx = np.array([
        [0.0, -t_rel[2], t_rel[1]],
        [t_rel[2], 0.0, -t_rel[0]],
        [-t_rel[1], t_rel[0], 0.0],
    ])
    essential = tx @ r_rel
    return np.linalg.inv(calib_b.K).T @ essential @ np.linalg.inv(calib_a.K)


def epipolar_error(pose_a: Pose2D, calib_a: CameraCalib,
                   pose_b: Pose2D, calib_b: CameraCalib) -> float:
    """Confidence-weighted mean symmetric epipolar distance in pixels.

    Per keypoint, averages the point-to-epipolar-line distance measured in
    both images; keypoint weights are min(conf_a, conf_b). Falls back to
    the unweighted mean when every weight is zero, so that matching costs
    stay defined for all-occluded detections.
    """
    if pose_a.num_joints != pose_b.num_joints:
        raise InvalidInputError("keypoint counts differ between views")
    F = fundamental_matrix(calib_a, calib_b)
    xa = to_homogeneous(pose_a.pixels)
    xb = to_homogeneous(pose_b.pixels)
    lines_b = xa @ F.T       # epipolar lines of a's points in image b
    lines_a = xb @ F         # epipolar lines of b's points in image a
    d_b = np.abs(np.sum(lines_b * xb, axis=1)) / np.linalg.norm(lines_b[:, :2], axis=1)
    d_a = np.abs(np.sum(lines_a * xa, axis=1)) / np.linalg.norm(lines_a[:, :2], axis=1)
    sym = 0.5 * (d_a + d_b)
    w = np.minimum(pose_a.conf, pose_b.conf)
    total = w.sum()
    if total == 0.0:
        return float(sym.mean())
    return float((sym * w).sum() / total)
