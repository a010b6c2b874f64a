"""Evaluation harness: MPJPE reports over camera subsets, the triangulation
baseline, scene recentering, input-modality ablation, the camera-angle
sweep, and a throughput benchmark.

Reports enumerate camera subsets per sample (all pairs, a fixed list, or
random N-subsets), score each subset with all-keypoint and KP* MPJPE, and
aggregate per-pair means weighted by their sample counts (the aggregate is
re-derivable from the per-pair rows).
"""

import hashlib
import itertools
import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import (
    DegenerateGeometryError,
    InsufficientViewsError,
    InvalidInputError,
)
from .geometry import CameraCalib, triangulate_dlt
from .model import LifterConfig, lift_pose, load_checkpoint
from .skeleton import Pose3D, kp_star_mask, mpjpe
from .synthgen import (
    SceneConfig,
    Sample,
    ZERO_NOISE,
    generate_sample,
    read_dataset,
)


# ------------------------------------------------------------------ baseline


class TriangulationLifter:
    """Per-joint DLT triangulation as a drop-in lifter.

    With ``conf_weighted`` each view's constraint rows are scaled by that
    view's keypoint confidence; zero-confidence observations drop out. If a
    joint cannot be triangulated (all confidences zero) the unweighted
    solve is retried before giving up on the joint.
    """

    def __init__(self, conf_weighted: bool = True):
        self.conf_weighted = conf_weighted

    def lift(self, views) -> Pose3D:
        if len(views) < 2:
            raise InsufficientViewsError("triangulation needs >= 2 views")
        m = views[0][1].num_joints
        joints = np.zeros((m, 3))
        for j in range(m):
            obs = [(pose2d.pixels[j], calib) for calib, pose2d in views]
            weights = [pose2d.conf[j] for _, pose2d in views]
            if not self.conf_weighted:
                weights = None
            try:
                joints[j] = triangulate_dlt(obs, weights=weights)
            except (InsufficientViewsError, DegenerateGeometryError):
                try:
                    joints[j] = triangulate_dlt(obs)
                except DegenerateGeometryError:
                    warnings.warn(f"joint {j}: degenerate triangulation, "
                                  "reporting origin", stacklevel=2)
                    joints[j] = 0.0
        return Pose3D(joints=joints)


def plain_lift(model, views) -> Pose3D:
    """Dispatch: torch lifters go through featurization, others expose .lift."""
    if hasattr(model, "lift"):
        return model.lift(views)
    return lift_pose(model, views)


# ---------------------------------------------------------------- recentering


def recenter_translation(views, conf_weighted: bool = True) -> np.ndarray:
    """Scene centroid estimate: confidence-weighted mean of triangulated
    joints, weight per joint = min over views of its 2D confidence.

    Fallbacks: all weights zero -> unweighted mean of the triangulated
    joints; nothing triangulates -> zero translation with a warning.
    """
    if len(views) < 2:
        raise InsufficientViewsError("recentering needs >= 2 views")
    m = views[0][1].num_joints
    points = np.zeros((m, 3))
    ok = np.zeros(m, dtype=bool)
    w = np.array([min(pose2d.conf[j] for _, pose2d in views) for j in range(m)])
    for j in range(m):
        obs = [(pose2d.pixels[j], calib) for calib, pose2d in views]
        weights = [pose2d.conf[j] for _, pose2d in views] if conf_weighted \
            else None
        try:
            points[j] = triangulate_dlt(obs, weights=weights)
            ok[j] = True
        except (InsufficientViewsError, DegenerateGeometryError):
            try:
                points[j] = triangulate_dlt(obs)
                ok[j] = True
            except (InsufficientViewsError, DegenerateGeometryError):
                continue
    if not ok.any():
        warnings.warn("recentering: no joint triangulated, using t = 0",
                      stacklevel=2)
        return np.zeros(3)
    w = np.where(ok, w, 0.0)
    if w.sum() == 0.0:
        return points[ok].mean(axis=0)
    return (w[:, None] * points).sum(axis=0) / w.sum()


def shift_views(views, offset) -> list:
    """Translate every camera center by ``offset`` (rays move rigidly)."""
    offset = np.asarray(offset, dtype=np.float64).reshape(3)
    return [(CameraCalib(K=c.K, R=c.R, T=c.T + offset), p) for c, p in views]


def recenter_and_lift(model, views) -> Pose3D:
    """Lift in scene-centered coordinates, then undo the shift.

    Output = plain_lift(views shifted by -t) + t, where t is the
    triangulated, confidence-weighted scene centroid. Single-view input
    falls back to a plain lift (no triangulation possible).
    """
    if len(views) < 2:
        return plain_lift(model, views)
    t = recenter_translation(views)
    lifted = plain_lift(model, shift_views(views, -t))
    return Pose3D(joints=lifted.joints + t)


# ------------------------------------------------------------------- reports


@dataclass
class EvalPolicy:
    """Which camera subsets to score per sample.

    kind "all_pairs": every 2-combination of the sample's views.
    kind "fixed": the given list of view-index tuples.
    kind "subsets": ``draws`` random ``num_views``-subsets per sample.
    """

    kind: str = "all_pairs"
    num_views: int = 2
    draws: int = 1
    subsets: tuple = ()

    def __post_init__(self):
        if self.kind not in ("all_pairs", "fixed", "subsets"):
            raise InvalidInputError(f"unknown policy kind {self.kind!r}")
        if self.kind == "fixed" and not self.subsets:
            raise InvalidInputError("fixed policy needs subsets")
        if self.kind == "subsets" and (self.num_views < 1 or self.draws < 1):
            raise InvalidInputError("subsets policy needs num_views, draws >= 1")
        self.subsets = tuple(tuple(int(i) for i in s) for s in self.subsets)

    def enumerate(self, num_views: int, rng):
        """Index tuples to evaluate for a sample with ``num_views`` views."""
        if self.kind == "all_pairs":
            return list(itertools.combinations(range(num_views), 2))
        if self.kind == "fixed":
            return [s for s in self.subsets if max(s) < num_views]
        if num_views < self.num_views:
            return []
        return [tuple(sorted(rng.choice(num_views, size=self.num_views,
                                        replace=False).tolist()))
                for _ in range(self.draws)]


@dataclass
class EvalReport:
    rows: list                 # per-(sample, subset) records
    per_pair: list             # per-subset aggregation
    aggregate: dict            # overall means, mm
    sample_count: int
    skipped: int
    digest: dict = field(default_factory=dict)

    def aggregate_from_pairs(self) -> dict:
        """Re-derive the aggregate from per-pair rows (report invariant)."""
        total = sum(p["count"] for p in self.per_pair)
        if total == 0:
            return {"mpjpe_all_mm": float("nan"), "mpjpe_star_mm": float("nan")}
        return {
            "mpjpe_all_mm": sum(p["mpjpe_all_mm"] * p["count"]
                                for p in self.per_pair) / total,
            "mpjpe_star_mm": sum(p["mpjpe_star_mm"] * p["count"]
                                 for p in self.per_pair) / total,
        }

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump({"aggregate": self.aggregate, "per_pair": self.per_pair,
                       "rows": self.rows, "sample_count": self.sample_count,
                       "skipped": self.skipped, "digest": self.digest},
                      f, indent=2, sort_keys=True)

    def to_csv(self, path):
        import csv
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["scene_id", "subset", "mpjpe_all_mm",
                             "mpjpe_star_mm"])
            for r in self.rows:
                writer.writerow([r["scene_id"],
                                 "+".join(map(str, r["subset"])),
                                 f"{r['mpjpe_all_mm']:.6f}",
                                 f"{r['mpjpe_star_mm']:.6f}"])


def _star_mask(num_joints):
    if num_joints == 17:
        return kp_star_mask("h36m17")
    return None


def _config_digest(payload: dict) -> dict:
    canonical = json.dumps(payload, sort_keys=True, default=str)
    payload = dict(payload)
    payload["sha256"] = hashlib.sha256(canonical.encode()).hexdigest()[:16]
    return payload


def evaluate(model, dataset, policy: EvalPolicy = None, recenter: bool = False,
             seed: int = 0) -> EvalReport:
    """Score a lifter over a dataset under a subset policy.

    ``model`` is a torch lifter, a ``.lift``-style object, or a checkpoint
    path; ``dataset`` is a Sample list or a dataset path. Pure: fixed
    (model, dataset, policy, seed) give an identical report.
    """
    if isinstance(model, (str, Path)):
        model, _ = load_checkpoint(model)
    if isinstance(dataset, (str, Path)):
        dataset = read_dataset(dataset)
    policy = policy or EvalPolicy()
    rng = np.random.default_rng(seed)
    rows = []
    skipped = 0
    star = None
    for sample in dataset:
        subsets = policy.enumerate(sample.num_views, rng)
        if not subsets:
            skipped += 1
            continue
        if star is None:
            star = _star_mask(sample.gt.num_joints)
        for subset in subsets:
            views = [sample.views[i] for i in subset]
            pred = (recenter_and_lift(model, views) if recenter
                    else plain_lift(model, views))
            rows.append({
                "scene_id": sample.scene_id,
                "subset": tuple(subset),
                "mpjpe_all_mm": mpjpe(sample.gt, pred),
                "mpjpe_star_mm": mpjpe(sample.gt, pred, mask=star)
                if star is not None else mpjpe(sample.gt, pred),
            })
    per_pair = []
    for subset in sorted({r["subset"] for r in rows}):
        group = [r for r in rows if r["subset"] == subset]
        per_pair.append({
            "subset": subset,
            "count": len(group),
            "mpjpe_all_mm": float(np.mean([r["mpjpe_all_mm"] for r in group])),
            "mpjpe_star_mm": float(np.mean([r["mpjpe_star_mm"] for r in group])),
        })
    total = len(rows)
    aggregate = {
        "mpjpe_all_mm": float(np.mean([r["mpjpe_all_mm"] for r in rows]))
        if rows else float("nan"),
        "mpjpe_star_mm": float(np.mean([r["mpjpe_star_mm"] for r in rows]))
        if rows else float("nan"),
    }
    model_desc = (asdict(model.config) if hasattr(model, "config")
                  and isinstance(getattr(model, "config"), LifterConfig)
                  else type(model).__name__)
    digest = _config_digest({
        "policy": asdict(policy),
        "recenter": recenter,
        "seed": seed,
        "model": model_desc,
        "samples": len(dataset),
        "aggregation": "pair_means_weighted_by_sample_count",
    })
    return EvalReport(rows=rows, per_pair=per_pair, aggregate=aggregate,
                      sample_count=len(dataset) - skipped, skipped=skipped,
                      digest=digest)


# ------------------------------------------------------------------ ablation


def ablate_input_modality(dataset, models, policy: EvalPolicy = None,
                          recenter: bool = False, seed: int = 0) -> list:
    """Evaluate lifter variants side by side on one dataset.

    ``models``: list of torch lifters (typically trained on rays,
    pixels+calib, and raw pixels). Each is featurized per its own config.
    Returns one row per model: {input_mode, mpjpe_all_mm, mpjpe_star_mm}.
    """
    if len(models) == 0:
        raise InvalidInputError("need at least one model")
    joints = {m.config.num_joints for m in models}
    if len(joints) != 1:
        raise InvalidInputError(
            f"models disagree on keypoint count: {sorted(joints)}")
    if isinstance(dataset, (str, Path)):
        dataset = read_dataset(dataset)
    rows = []
    for model in models:
        report = evaluate(model, dataset, policy=policy, recenter=recenter,
                          seed=seed)
        rows.append({
            "input_mode": model.config.input_mode,
            "mpjpe_all_mm": report.aggregate["mpjpe_all_mm"],
            "mpjpe_star_mm": report.aggregate["mpjpe_star_mm"],
        })
    return rows


# --------------------------------------------------------------- angle sweep


def sweep_cameras(height: float, angle_deg: float, radius: float = 6.0,
                  focal: float = 1200.0, image_size=(1000, 1000),
                  target=(0.0, 0.0, 1.0)):
    """Two cameras on the radius-``radius`` sphere at ``height``.

    Both sit on the circle of radius sqrt(radius^2 - height^2); one is
    fixed at azimuth 0, the other at azimuth ``angle_deg``. Both look at
    ``target``.
    """
    if not 0.0 < angle_deg <= 180.0:
        raise InvalidInputError(
            f"angle must lie in (0, 180] degrees, got {angle_deg}")
    if height >= radius:
        raise InvalidInputError("height must be below the sphere radius")
    from .synthgen import look_at_rotation
    r = float(np.sqrt(radius ** 2 - height ** 2))
    w, h = image_size
    K = np.array([[focal, 0.0, w / 2.0], [0.0, focal, h / 2.0],
                  [0.0, 0.0, 1.0]])
    cams = []
    for azimuth in (0.0, np.deg2rad(angle_deg)):
        T = np.array([r * np.cos(azimuth), r * np.sin(azimuth), height])
        cams.append(CameraCalib(K=K, R=look_at_rotation(T, target), T=T))
    return cams


def angle_sweep(model, angles_deg, heights=(2.2, 3.2, 4.0), radius: float = 6.0,
                num_scenes: int = 50, seed: int = 0, noise=None,
                recenter: bool = False, csv_path=None, plot_path=None) -> list:
    """MPJPE as a function of the azimuth between two sphere cameras.

    For every (height, angle) cell the same ``num_scenes`` poses (seeded
    per scene index, so identical across cells) are projected through the
    cell's camera pair and scored. Returns one row per cell; optionally
    writes a CSV and a PNG plot.
    """
    angles_deg = [float(a) for a in angles_deg]
    for a in angles_deg:
        if not 0.0 < a <= 180.0:
            raise InvalidInputError(
                f"angle must lie in (0, 180] degrees, got {a}")
    noise = noise or ZERO_NOISE
    scene_cfg = SceneConfig(person_area=((-0.3, -0.3), (0.3, 0.3)),
                            height_range=(0.9, 1.1))
    rows = []
    for height in heights:
        for angle in angles_deg:
            cams = sweep_cameras(height, angle, radius=radius)
            errs_all, errs_star = [], []
            star = None
            for i in range(num_scenes):
                rng = np.random.default_rng([seed, i])
                sample = generate_sample(scene_cfg, None, noise, rng,
                                         scene_id=f"sweep_{i}", cameras=cams)
                if star is None:
                    star = _star_mask(sample.gt.num_joints)
                pred = (recenter_and_lift(model, sample.views) if recenter
                        else plain_lift(model, sample.views))
                errs_all.append(mpjpe(sample.gt, pred))
                errs_star.append(mpjpe(sample.gt, pred, mask=star))
            rows.append({"height": float(height), "angle_deg": angle,
                         "mpjpe_all_mm": float(np.mean(errs_all)),
                         "mpjpe_star_mm": float(np.mean(errs_star)),
                         "count": num_scenes})
    if csv_path:
        import csv as csv_mod
        with open(csv_path, "w", newline="") as f:
            writer = csv_mod.writer(f)
            writer.writerow(["height", "angle_deg", "mpjpe_all_mm",
                             "mpjpe_star_mm", "count"])
            for r in rows:
                writer.writerow([r["height"], r["angle_deg"],
                                 f"{r['mpjpe_all_mm']:.6f}",
                                 f"{r['mpjpe_star_mm']:.6f}", r["count"]])
    if plot_path:
        _plot_sweep(rows, plot_path)
    return rows


def _plot_sweep(rows, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    for height in sorted({r["height"] for r in rows}):
        pts = sorted((r["angle_deg"], r["mpjpe_all_mm"])
                     for r in rows if r["height"] == height)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                label=f"h = {height} m")
    ax.set_xlabel("camera separation (deg)")
    ax.set_ylabel("MPJPE (mm)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ----------------------------------------------------------------- benchmark


def bench_speed(model, view_grid=(2, 3, 4, 5), batch_grid=(1, 2, 4, 8),
                repeats: int = 30, warmup: int = 3, seed: int = 0) -> list:
    """Frames/second per (views, batch) cell; a frame is one sample with
    all its views. Median of ``repeats`` timed forwards after warmup."""
    config = model.config
    device = next(model.parameters()).device
    was_training = model.training
    model.eval()
    g = torch.Generator().manual_seed(seed)
    rows = []
    with torch.no_grad():
        for n in view_grid:
            for b in batch_grid:
                feat = torch.randn(b, config.num_joints, n,
                                   config.num_features, generator=g)
                conf = torch.rand(b, config.num_joints, n, generator=g)
                feat = feat.to(device)
                conf = conf.to(device)
                for _ in range(warmup):
                    model(feat, conf)
                times = []
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    model(feat, conf)
                    times.append(time.perf_counter() - t0)
                fps = b / float(np.median(times))
                rows.append({"views": int(n), "batch": int(b),
                             "fps": float(fps)})
    if was_training:
        model.train()
    return rows
