"""Shared test utilities: toy configs, random inputs, gradient checking,
camera rigs, and multi-person scenes."""

import numpy as np
import torch

from raylift.geometry import CameraCalib, project_many
from raylift.model import LifterConfig
from raylift.multiperson import ViewDetections
from raylift.skeleton import Pose2D
from raylift.synthgen import look_at_rotation, sample_pose
from raylift.training import mpjpe_loss


def toy_config(**overrides):
    kw = dict(num_joints=4, dim=16, layers=1, heads=2, max_views=5)
    kw.update(overrides)
    return LifterConfig(**kw)


def random_inputs(config, batch=2, views=3, seed=0, dtype=torch.double):
    g = torch.Generator().manual_seed(seed)
    feat = torch.randn(batch, config.num_joints, views, config.num_features,
                       generator=g, dtype=dtype)
    conf = torch.rand(batch, config.num_joints, views, generator=g,
                      dtype=dtype)
    gt = torch.randn(batch, config.num_joints, 3, generator=g, dtype=dtype)
    return feat, conf, gt


def ring_cameras(rng, n_views, target=(0.0, 0.0, 1.0), radius=4.0,
                 focal=1100.0, image_size=(1000, 1000)):
    """Cameras spread on a rough ring, all looking at ``target``."""
    target = np.asarray(target, dtype=np.float64)
    w, h = image_size
    cams = []
    for i in range(n_views):
        angle = 2 * np.pi * i / n_views + rng.uniform(-0.15, 0.15)
        T = target + np.array([radius * np.cos(angle),
                               radius * np.sin(angle),
                               rng.uniform(1.0, 2.5)])
        f = focal * rng.uniform(0.9, 1.1)
        K = np.array([[f, 0.0, w / 2.0], [0.0, f, h / 2.0], [0.0, 0.0, 1.0]])
        cams.append(CameraCalib(K=K, R=look_at_rotation(T, target), T=T))
    return cams


def make_multiperson_scene(rng, n_people=2, n_views=3, separation=1.5,
                           sigma_px=0.0, center=(0.0, 0.0)):
    """Noiseless-by-default multi-person scene with known identities.

    People are placed on a circle with pairwise distance >= ``separation``.
    Detection order is shuffled independently per view. Returns
    (gt_poses, views, true_groups) where true_groups[p] maps view index ->
    detection index of person p.
    """
    ring = separation / (2 * np.sin(np.pi / n_people)) if n_people > 1 else 0.0
    ring = max(ring, separation / 2.0)
    phase = rng.uniform(0, 2 * np.pi)
    gt_poses = []
    for p in range(n_people):
        angle = phase + 2 * np.pi * p / n_people
        root = np.array([center[0] + ring * np.cos(angle),
                         center[1] + ring * np.sin(angle),
                         rng.uniform(0.9, 1.1)])
        gt_poses.append(sample_pose(None, rng).joints + root)
    look_at = np.append(np.asarray(center, dtype=np.float64), 1.0)
    cams = ring_cameras(rng, n_views, target=look_at,
                        radius=4.0 + ring)
    views = []
    true_groups = [dict() for _ in range(n_people)]
    for v, calib in enumerate(cams):
        order = rng.permutation(n_people)
        people = []
        for d, p in enumerate(order):
            pixels, _ = project_many(gt_poses[p], calib)
            noisy = pixels + rng.normal(scale=sigma_px, size=pixels.shape) \
                if sigma_px > 0 else pixels
            people.append(Pose2D(pixels=noisy, conf=np.ones(17)))
            true_groups[p][v] = d
        views.append(ViewDetections(calib=calib, people=people))
    return gt_poses, views, true_groups


def gradient_check(model, feat, conf, gt, step=1e-4, rel_tol=1e-3,
                   max_coords_per_tensor=None, rng=None):
    """Fraction of parameter coordinates whose autograd gradient matches a
    central finite difference of the MPJPE loss within rel_tol.

    Run the model in float64. ``max_coords_per_tensor`` subsamples
    coordinates per parameter tensor (None = all).
    """
    model.zero_grad()
    loss = mpjpe_loss(model(feat, conf), gt)
    loss.backward()
    checked = 0
    hits = 0
    with torch.no_grad():
        for _, p in model.named_parameters():
            flat = p.view(-1)
            grad = p.grad.view(-1)
            idx = np.arange(flat.numel())
            if max_coords_per_tensor and idx.size > max_coords_per_tensor:
                idx = (rng or np.random.default_rng(0)).choice(
                    idx, size=max_coords_per_tensor, replace=False)
            for i in idx:
                orig = flat[i].item()
                flat[i] = orig + step
                up = mpjpe_loss(model(feat, conf), gt).item()
                flat[i] = orig - step
                down = mpjpe_loss(model(feat, conf), gt).item()
                flat[i] = orig
                fd = (up - down) / (2.0 * step)
                ga = grad[i].item()
                denom = max(abs(fd), abs(ga))
                checked += 1
                if denom < 1e-10 or abs(fd - ga) / denom <= rel_tol:
                    hits += 1
    return hits / checked, checked
