"""Cross-view person association and multi-person lifting.

Association chains pairwise Hungarian assignments: the view with the most
detections anchors the tracks, and every other view is assigned to those
tracks by minimizing the summed keypoint-averaged epipolar error. A cost
above the threshold leaves a detection unassigned; it then forms its own
singleton group, so every detection lands in exactly one group.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DatasetParseError, InvalidInputError
from .geometry import CameraCalib, epipolar_error
from .skeleton import Pose2D, Pose3D

SCENE_SCHEMA_VERSION = 2

# Average epipolar error (px) above which a detection is not attached to a
# track. The paper leaves this undefined; 20 px is far below typical
# cross-person errors and far above same-person noise at desk scale.
DEFAULT_MATCH_THRESHOLD_PX = 20.0


@dataclass
class ViewDetections:
    calib: CameraCalib
    people: list = field(default_factory=list)  # of Pose2D

    def __post_init__(self):
        counts = {p.num_joints for p in self.people}
        if len(counts) > 1:
            raise InvalidInputError(
                f"detections disagree on keypoint count: {sorted(counts)}")


def epipolar_cost_matrix(anchor: ViewDetections, other: ViewDetections,
                         track_ids) -> np.ndarray:
    """Cost[t, d] = keypoint-averaged epipolar error between anchor
    detection ``track_ids[t]`` and detection d of the other view."""
    cost = np.zeros((len(track_ids), len(other.people)))
    for t, i in enumerate(track_ids):
        for d, det in enumerate(other.people):
            cost[t, d] = epipolar_error(anchor.people[i], anchor.calib,
                                        det, other.calib)
    return cost


def match_people(views, threshold: float = DEFAULT_MATCH_THRESHOLD_PX) -> list:
    """Group detections across views.

    Returns a list of groups, each a dict {view_index: detection_index}.
    Detections too expensive to attach (or in excess of the anchor's
    count) become singleton groups.
    """
    if len(views) < 2:
        raise InvalidInputError("matching needs >= 2 views")
    if all(len(v.people) == 0 for v in views):
        return []
    anchor_idx = int(np.argmax([len(v.people) for v in views]))
    anchor = views[anchor_idx]
    track_ids = list(range(len(anchor.people)))
    groups = [{anchor_idx: i} for i in track_ids]
    leftovers = []
    for v, view in enumerate(views):
        if v == anchor_idx or len(view.people) == 0:
            continue
        cost = epipolar_cost_matrix(anchor, view, track_ids)
        rows, cols = linear_sum_assignment(cost)
        assigned = set()
        for t, d in zip(rows, cols):
            if cost[t, d] <= threshold:
                groups[t][v] = int(d)
                assigned.add(int(d))
        leftovers.extend({v: d} for d in range(len(view.people))
                         if d not in assigned)
    return groups + leftovers


def lift_scene(views, groups, model, min_views: int = 2,
               threshold: float = DEFAULT_MATCH_THRESHOLD_PX) -> list:
    """Lift each matched group to 3D; recentering always on.

    ``groups`` may be None to run match_people first. Groups with fewer
    than ``min_views`` views are excluded (a single ray cannot place a
    person in the world) but remain visible in the returned groups of
    match_people. Returns [(group, Pose3D), ...].
    """
    from .evaluation import recenter_and_lift
    if groups is None:
        groups = match_people(views, threshold=threshold)
    out = []
    for group in groups:
        if len(group) < min_views:
            continue
        sample_views = [(views[v].calib, views[v].people[d])
                        for v, d in sorted(group.items())]
        out.append((group, recenter_and_lift(model, sample_views)))
    return out


def ap100(predictions, gts, threshold_mm: float = 100.0) -> float:
    """Detection-style average precision at an MPJPE threshold.

    Predictions and ground truths are greedily matched by ascending MPJPE
    (each used at most once); a prediction is correct if its match is
    below the threshold. Score = correct / max(#pred, #gt).
    """
    from .skeleton import mpjpe
    if len(gts) == 0 and len(predictions) == 0:
        return 1.0
    if len(gts) == 0 or len(predictions) == 0:
        return 0.0
    pairs = sorted(
        ((mpjpe(gt, pred), p, g) for p, pred in enumerate(predictions)
         for g, gt in enumerate(gts)),
        key=lambda x: x[0])
    used_p, used_g = set(), set()
    correct = 0
    for err, p, g in pairs:
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        if err < threshold_mm:
            correct += 1
    return correct / max(len(predictions), len(gts))


# ------------------------------------------------------------- serialization


def scene_to_dict(people, views, scene_id: str) -> dict:
    """Multi-person record: schema v2 of the dataset container."""
    return {
        "schema": SCENE_SCHEMA_VERSION,
        "scene_id": scene_id,
        "people": [p.joints.tolist() for p in people],
        "views": [
            {
                "K": v.calib.K.tolist(),
                "R": v.calib.R.tolist(),
                "T": v.calib.T.tolist(),
                "detections": [
                    {"pose2d": p.pixels.tolist(), "conf": p.conf.tolist()}
                    for p in v.people
                ],
            }
            for v in views
        ],
    }


def scene_from_dict(d: dict):
    if d.get("schema") != SCENE_SCHEMA_VERSION:
        raise DatasetParseError(
            f"expected schema {SCENE_SCHEMA_VERSION}, got {d.get('schema')!r}")
    people = [Pose3D(joints=np.array(p)) for p in d["people"]]
    views = [
        ViewDetections(
            calib=CameraCalib(K=np.array(v["K"]), R=np.array(v["R"]),
                              T=np.array(v["T"])),
            people=[Pose2D(pixels=np.array(det["pose2d"]),
                           conf=np.array(det["conf"]))
                    for det in v["detections"]])
        for v in d["views"]
    ]
    return people, views, d["scene_id"]


def write_scenes(scenes, path):
    """scenes: iterable of (people, views, scene_id) triples."""
    with open(path, "w") as f:
        for people, views, scene_id in scenes:
            f.write(json.dumps(scene_to_dict(people, views, scene_id),
                               sort_keys=True))
            f.write("\n")


def read_scenes(path):
    scenes = []
    with open(path) as f:
        for i, line in enumerate(f):
            if not line.strip():
                continue
            try:
                scenes.append(scene_from_dict(json.loads(line)))
            except DatasetParseError:
                raise
            except Exception as e:
                raise DatasetParseError(
                    f"bad scene record at line {i + 1}") from e
    return scenes
