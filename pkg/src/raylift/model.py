"""Two-stage transformer lifter: per-keypoint view fusion, then whole-pose
fusion over joints.

Stage 1 (view fusion) runs independently per keypoint with shared weights:
each view's input feature and confidence are embedded into one token, a
learnable fusion token is prepended, and after L pre-norm encoder layers the
fusion token's output is read as the per-keypoint fused feature. No
positional encoding is applied over views, so the output is invariant to
view order and to the number of views.

Stage 2 (pose fusion) adds a learned per-joint embedding to the M fused
features, runs L more encoder layers over the joints, and regresses each
token to a 3D joint position with a linear head.

Input featurizations ("input_mode"):
    rays         [origin / scene_scale | direction]                -> 6
    pixels       pixels / pixel_scale                              -> 2
    pixels_calib pixels ⊕ K.flat / pixel_scale ⊕ R.flat ⊕ T/scale  -> 23
The rays mode is the intended one; the others exist for ablations.
"""

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, InvalidInputError
from .geometry import pixels_to_rays
from .skeleton import Pose3D

CHECKPOINT_VERSION = 1

INPUT_FEATURES = {"rays": 6, "pixels": 2, "pixels_calib": 23}


@dataclass
class LifterConfig:
    num_joints: int = 17
    dim: int = 256
    layers: int = 12
    heads: int = 8
    mlp_ratio: int = 4
    max_views: int = 5
    input_mode: str = "rays"
    use_conf: bool = True
    mask_zero_conf: bool = False  # attention-mask missing keypoints, default off
    scene_scale: float = 6.0      # meters; normalizes ray origins / T
    pixel_scale: float = 1000.0   # normalizes pixel coords and K

    def __post_init__(self):
        if self.dim % 2 != 0:
            raise ConfigError("dim must be even (it is split D/2 + D/2)")
        if self.dim % self.heads != 0:
            raise ConfigError("dim must be divisible by heads")
        if min(self.layers, self.heads, self.num_joints, self.max_views) < 1:
            raise ConfigError("layers, heads, num_joints, max_views must be >= 1")
        if self.input_mode not in INPUT_FEATURES:
            raise ConfigError(
                f"input_mode must be one of {sorted(INPUT_FEATURES)}, "
                f"got {self.input_mode!r}")
        if self.scene_scale <= 0 or self.pixel_scale <= 0:
            raise ConfigError("scales must be positive")

    @property
    def num_features(self):
        return INPUT_FEATURES[self.input_mode]


def featurize_views(views, config: LifterConfig):
    """Convert one sample's views to model inputs.

    views: list of (CameraCalib, Pose2D). Returns (feat (M, N, F) float32,
    conf (M, N) float32) numpy arrays, views in input order.
    """
    if len(views) == 0:
        raise InvalidInputError("need at least one view")
    feats, confs = [], []
    for calib, pose2d in views:
        m = pose2d.num_joints
        if m != config.num_joints:
            raise InvalidInputError(
                f"pose has {m} keypoints, model expects {config.num_joints}")
        if config.input_mode == "rays":
            rays = pixels_to_rays(pose2d.pixels, calib)
            f = np.concatenate(
                [rays[:, :3] / config.scene_scale, rays[:, 3:]], axis=1)
        elif config.input_mode == "pixels":
            f = pose2d.pixels / config.pixel_scale
        else:  # pixels_calib
            per_view = np.concatenate([
                calib.K.ravel() / config.pixel_scale,
                calib.R.ravel(),
                calib.T / config.scene_scale,
            ])
            f = np.concatenate(
                [pose2d.pixels / config.pixel_scale,
                 np.tile(per_view, (m, 1))], axis=1)
        feats.append(f)
        confs.append(pose2d.conf)
    feat = np.stack(feats, axis=1).astype(np.float32)
    conf = np.stack(confs, axis=1).astype(np.float32)
    return feat, conf


class EncoderLayer(nn.Module):
    """Pre-norm residual block: x + MHSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim, heads, mlp_ratio):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, dim * mlp_ratio),
            nn.GELU(),
            nn.Linear(dim * mlp_ratio, dim),
        )

    def forward(self, x, key_padding_mask=None):
        h = self.norm1(x)
        attn_out, _ = self.attn(h, h, h, key_padding_mask=key_padding_mask,
                                need_weights=False)
        x = x + attn_out
        return x + self.mlp(self.norm2(x))


class ViewFusion(nn.Module):
    """Per-keypoint fusion of N view tokens via a learnable fusion token.

    Weights are shared across keypoints: the batch and keypoint axes are
    flattened together before the encoder.
    """

    def __init__(self, config: LifterConfig):
        super().__init__()
        self.config = config
        d = config.dim
        if config.use_conf:
            self.feat_proj = nn.Linear(config.num_features, d // 2)
            self.conf_proj = nn.Linear(1, d // 2)
        else:
            self.feat_proj = nn.Linear(config.num_features, d)
            self.conf_proj = None
        self.fusion_token = nn.Parameter(torch.empty(d))
        nn.init.trunc_normal_(self.fusion_token, std=0.02)
        self.layers = nn.ModuleList(
            EncoderLayer(d, config.heads, config.mlp_ratio)
            for _ in range(config.layers))

    def embed(self, feat, conf):
        """(B, M, N, F), (B, M, N) -> (B, M, N+1, D), fusion token first."""
        if feat.shape[-2] < 1:
            raise InvalidInputError("need at least one view token")
        if self.conf_proj is not None:
            tokens = torch.cat(
                [self.feat_proj(feat), self.conf_proj(conf.unsqueeze(-1))],
                dim=-1)
        else:
            tokens = self.feat_proj(feat)
        fusion = self.fusion_token.expand(*tokens.shape[:2], 1, -1)
        return torch.cat([fusion, tokens], dim=-2)

    def forward(self, feat, conf):
        """(B, M, N, F), (B, M, N) -> fused (B, M, D)."""
        b, m, n, _ = feat.shape
        tokens = self.embed(feat, conf).reshape(b * m, n + 1, -1)
        mask = None
        if self.config.mask_zero_conf:
            mask = torch.cat(
                [torch.zeros(b * m, 1, dtype=torch.bool, device=feat.device),
                 (conf == 0).reshape(b * m, n)], dim=1)
            # keep fully-occluded keypoints attending to the fusion token
        for layer in self.layers:
            tokens = layer(tokens, key_padding_mask=mask)
        return tokens[:, 0].reshape(b, m, -1)


class PoseFusion(nn.Module):
    """Joint-level encoder over per-keypoint features, plus regression head."""

    def __init__(self, config: LifterConfig):
        super().__init__()
        d = config.dim
        self.joint_embed = nn.Parameter(torch.empty(config.num_joints, d))
        nn.init.trunc_normal_(self.joint_embed, std=0.02)
        self.layers = nn.ModuleList(
            EncoderLayer(d, config.heads, config.mlp_ratio)
            for _ in range(config.layers))
        self.head = nn.Linear(d, 3)

    def forward(self, fused):
        """(B, M, D) -> (B, M, 3)."""
        x = fused + self.joint_embed
        for layer in self.layers:
            x = layer(x)
        return self.head(x)


class PoseLifter(nn.Module):
    def __init__(self, config: LifterConfig):
        super().__init__()
        self.config = config
        self.view_fusion = ViewFusion(config)
        self.pose_fusion = PoseFusion(config)

    def forward(self, feat, conf):
        """(B, M, N, F), (B, M, N) -> (B, M, 3) world-space joints (meters)."""
        if feat.ndim != 4 or conf.ndim != 3 or feat.shape[:3] != conf.shape:
            raise InvalidInputError(
                f"expected feat (B, M, N, F) with matching conf (B, M, N), "
                f"got {tuple(feat.shape)} and {tuple(conf.shape)}")
        if feat.shape[1] != self.config.num_joints:
            raise InvalidInputError(
                f"expected {self.config.num_joints} keypoints, got {feat.shape[1]}")
        if feat.shape[3] != self.config.num_features:
            raise InvalidInputError(
                f"expected {self.config.num_features} features for mode "
                f"{self.config.input_mode!r}, got {feat.shape[3]}")
        return self.pose_fusion(self.view_fusion(feat, conf))


class FcBaseline(nn.Module):
    """View-count-rigid baseline: all joints' inputs flattened into one MLP.

    Takes exactly ``fixed_views`` views (the count it was built for) and
    cannot run on any other N -- the rigidity the token architecture removes.
    """

    def __init__(self, config: LifterConfig, fixed_views: int):
        super().__init__()
        if fixed_views < 1:
            raise ConfigError("fixed_views must be >= 1")
        self.config = config
        self.fixed_views = fixed_views
        d = config.dim
        in_dim = config.num_joints * fixed_views * (config.num_features + 1)
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, d), nn.GELU(),
            nn.Linear(d, d), nn.GELU(),
            nn.Linear(d, config.num_joints * 3),
        )

    def forward(self, feat, conf):
        b, m, n, _ = feat.shape
        if n != self.fixed_views:
            raise InvalidInputError(
                f"baseline is fixed to {self.fixed_views} views, got {n}")
        if m != self.config.num_joints:
            raise InvalidInputError(
                f"expected {self.config.num_joints} keypoints, got {m}")
        flat = torch.cat([feat, conf.unsqueeze(-1)], dim=-1).reshape(b, -1)
        return self.mlp(flat).reshape(b, m, 3)


def lift_pose(model, views, recenter: bool = False) -> Pose3D:
    """Run the lifter on one sample's (CameraCalib, Pose2D) views."""
    if recenter:
        from .evaluation import recenter_and_lift
        return recenter_and_lift(model, views)
    feat, conf = featurize_views(views, model.config)
    device = next(model.parameters()).device
    dtype = next(model.parameters()).dtype
    feat_t = torch.from_numpy(feat)[None].to(device=device, dtype=dtype)
    conf_t = torch.from_numpy(conf)[None].to(device=device, dtype=dtype)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(feat_t, conf_t)[0]
    if was_training:
        model.train()
    return Pose3D(joints=out.double().cpu().numpy())


# ----------------------------------------------------------------- persistence


MODEL_KINDS = {"pose_lifter": PoseLifter}


def save_checkpoint(path, model, kind: str = "pose_lifter", meta=None):
    if kind not in MODEL_KINDS:
        raise InvalidInputError(f"unknown model kind {kind!r}")
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": asdict(model.config),
        "state_dict": {k: v.cpu() for k, v in model.state_dict().items()},
        "meta": dict(meta or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Load and validate a checkpoint; returns (model, meta).

    Fails closed: version, kind, config fields, and every tensor shape are
    checked against a freshly-built model before weights are accepted.
    """
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as e:
        raise ConfigError(f"unreadable checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise ConfigError(f"{path} is not a checkpoint container")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise ConfigError(
            f"checkpoint version {payload['format_version']} unsupported "
            f"(expected {CHECKPOINT_VERSION})")
    kind = payload.get("kind")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r} in checkpoint")
    try:
        config = LifterConfig(**payload["config"])
    except (TypeError, ConfigError) as e:
        raise ConfigError(f"invalid config in checkpoint: {e}") from e
    model = MODEL_KINDS[kind](config)
    expected = model.state_dict()
    stored = payload["state_dict"]
    if set(expected) != set(stored):
        missing = sorted(set(expected) - set(stored))
        extra = sorted(set(stored) - set(expected))
        raise ConfigError(
            f"checkpoint parameter names mismatch (missing {missing[:3]}, "
            f"unexpected {extra[:3]})")
    for name, tensor in expected.items():
        if tuple(stored[name].shape) != tuple(tensor.shape):
            raise ConfigError(
                f"shape mismatch for {name}: checkpoint "
                f"{tuple(stored[name].shape)} vs config {tuple(tensor.shape)}")
    model.load_state_dict(stored)
    model.eval()
    return model, payload.get("meta", {})
