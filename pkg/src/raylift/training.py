"""Loss, LR schedule, variable-view batching, and the training loop.

Each batch draws one view count N uniformly from [min_views, max_views] and
every sample in the batch contributes a random N-view subset of its stored
views; samples with fewer than N views are skipped for that batch (with a
warning). This is what makes a single parameter set usable at any view
count at test time.

Artifacts per run: ``epoch_%03d.ckpt`` after every epoch, ``best.ckpt``
tracking the lowest validation MPJPE, and ``metrics.csv`` with header
``epoch,lr,train_loss_m,val_mpjpe_mm``.
"""

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigError, InvalidInputError, TrainingDivergedError
from .model import LifterConfig, PoseLifter, featurize_views, save_checkpoint
from .synthgen import read_dataset


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 20
    lr: float = 1e-4
    lr_decay_epochs: tuple = (10, 15)
    lr_decay_factor: float = 0.1
    min_views: int = 2
    max_views: int = 5
    seed: int = 0

    def __post_init__(self):
        self.lr_decay_epochs = tuple(int(e) for e in self.lr_decay_epochs)
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if any(d >= self.epochs for d in self.lr_decay_epochs):
            raise ConfigError("lr decay epochs must be < epochs")
        if not 1 <= self.min_views <= self.max_views:
            raise ConfigError("need max_views >= min_views >= 1")


def mpjpe_loss(pred, gt):
    """Mean per-joint position error in meters, differentiable.

    Zero-distance joints get gradient 0 (the sqrt is guarded so autograd
    never sees d sqrt(0)).
    """
    if pred.shape != gt.shape:
        raise InvalidInputError(
            f"pred/gt shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    sumsq = ((pred - gt) ** 2).sum(dim=-1)
    nonzero = sumsq > 0
    safe = torch.where(nonzero, sumsq, torch.ones_like(sumsq))
    dist = torch.where(nonzero, torch.sqrt(safe), torch.zeros_like(sumsq))
    return dist.mean()


def learning_rate(epoch: int, config: TrainConfig) -> float:
    """Step schedule over 1-based epochs: decay after each listed epoch."""
    steps = sum(1 for d in config.lr_decay_epochs if epoch > d)
    return config.lr * config.lr_decay_factor ** steps


def sample_num_views(rng, min_views: int = 2, max_views: int = 5) -> int:
    """Uniform batch view count in [min_views, max_views]."""
    if max_views < min_views:
        raise InvalidInputError("max_views < min_views")
    return int(rng.integers(min_views, max_views + 1))


def choose_view_subset(rng, num_stored: int, n: int) -> np.ndarray:
    """n distinct view indices, uniform without replacement."""
    if n > num_stored:
        raise InvalidInputError(f"cannot pick {n} of {num_stored} views")
    return rng.permutation(num_stored)[:n]


class PackedDataset:
    """Dataset pre-featurized for a model config.

    Keeps per-sample (M, N_i, F) feature and (M, N_i) confidence arrays
    (view counts vary) plus the (S, M, 3) ground truth.
    """

    def __init__(self, samples, config: LifterConfig):
        if isinstance(samples, (str, Path)):
            samples = read_dataset(samples)
        if len(samples) == 0:
            raise InvalidInputError("empty dataset")
        self.config = config
        self.feat = []
        self.conf = []
        for s in samples:
            f, c = featurize_views(s.views, config)
            self.feat.append(f)
            self.conf.append(c)
        self.gt = np.stack([s.gt.joints for s in samples]).astype(np.float32)
        self.n_views = np.array([s.num_views for s in samples])

    def __len__(self):
        return len(self.feat)

    def gather(self, indices, view_indices):
        """Build a fixed-N batch: per-sample view subsets of equal length."""
        feat = np.stack([self.feat[i][:, v, :]
                         for i, v in zip(indices, view_indices)])
        conf = np.stack([self.conf[i][:, v]
                         for i, v in zip(indices, view_indices)])
        return (torch.from_numpy(feat), torch.from_numpy(conf),
                torch.from_numpy(self.gt[indices]))


def evaluate_mpjpe(model, dataset: PackedDataset, num_views=None, rng=None,
                   batch_size: int = 64) -> float:
    """Mean MPJPE (mm) over a packed dataset.

    num_views=None evaluates each sample with all its stored views
    (grouping equal view counts into batches); an integer evaluates on a
    subset per sample (random if ``rng`` given, else the first views).
    """
    device = next(model.parameters()).device
    was_training = model.training
    model.eval()
    errors = []
    order = np.arange(len(dataset))
    counts = dataset.n_views if num_views is None else np.minimum(
        dataset.n_views, num_views)
    if num_views is not None:
        usable = dataset.n_views >= num_views
        order = order[usable]
        counts = np.full(order.shape, num_views)
        if order.size == 0:
            raise InvalidInputError(
                f"no sample has >= {num_views} views")
    with torch.no_grad():
        for n in np.unique(counts):
            group = order[counts == n]
            for start in range(0, group.size, batch_size):
                idx = group[start:start + batch_size]
                if rng is None:
                    views = [np.arange(n)] * idx.size
                else:
                    views = [choose_view_subset(rng, dataset.n_views[i], n)
                             for i in idx]
                feat, conf, gt = dataset.gather(idx, views)
                pred = model(feat.to(device), conf.to(device))
                d = torch.linalg.norm(pred - gt.to(device), dim=-1)
                errors.append(d.mean(dim=-1).cpu().numpy())
    if was_training:
        model.train()
    return float(np.concatenate(errors).mean() * 1000.0)


@dataclass
class TrainResult:
    best_checkpoint: str
    final_checkpoint: str
    metrics_path: str
    metrics: list = field(default_factory=list)
    best_val_mpjpe_mm: float = float("inf")
    skipped_samples: int = 0


def train(model_config: LifterConfig, train_config: TrainConfig,
          train_data, val_data, out_dir, model=None) -> TrainResult:
    """Train a lifter; returns paths to checkpoints and the metric log.

    ``train_data`` / ``val_data`` are dataset paths or Sample lists.
    Deterministic for a fixed seed: all randomness flows from the config
    seed, and batching is single-threaded.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(train_config.seed)
    rng = np.random.default_rng(train_config.seed)

    if model is None:
        model = PoseLifter(model_config)
    device = next(model.parameters()).device
    train_set = (train_data if isinstance(train_data, PackedDataset)
                 else PackedDataset(train_data, model_config))
    val_set = (val_data if isinstance(val_data, PackedDataset)
               else PackedDataset(val_data, model_config))

    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.lr)
    result = TrainResult(
        best_checkpoint=str(out_dir / "best.ckpt"),
        final_checkpoint="",
        metrics_path=str(out_dir / "metrics.csv"),
    )

    with open(result.metrics_path, "w", newline="") as f:
        csv.writer(f).writerow(["epoch", "lr", "train_loss_m", "val_mpjpe_mm"])

    for epoch in range(1, train_config.epochs + 1):
        lr = learning_rate(epoch, train_config)
        for group in optimizer.param_groups:
            group["lr"] = lr
        model.train()
        order = rng.permutation(len(train_set))
        losses = []
        skipped = 0
        for start in range(0, order.size, train_config.batch_size):
            batch_ids = order[start:start + train_config.batch_size]
            n = sample_num_views(rng, train_config.min_views,
                                 train_config.max_views)
            keep = batch_ids[train_set.n_views[batch_ids] >= n]
            skipped += batch_ids.size - keep.size
            if keep.size == 0:
                continue
            views = [choose_view_subset(rng, train_set.n_views[i], n)
                     for i in keep]
            feat, conf, gt = train_set.gather(keep, views)
            pred = model(feat.to(device), conf.to(device))
            loss = mpjpe_loss(pred, gt.to(device))
            if not torch.isfinite(loss) or not torch.isfinite(pred).all():
                raise TrainingDivergedError(
                    f"non-finite loss/prediction at epoch {epoch}, batch "
                    f"{start // train_config.batch_size}, lr {lr:g}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        if skipped:
            warnings.warn(
                f"epoch {epoch}: skipped {skipped} sample draws with fewer "
                f"views than the batch draw", stacklevel=2)
        result.skipped_samples += skipped

        train_loss = float(np.mean(losses)) if losses else float("nan")
        val_mpjpe = evaluate_mpjpe(model, val_set)
        row = {"epoch": epoch, "lr": lr, "train_loss_m": train_loss,
               "val_mpjpe_mm": val_mpjpe}
        result.metrics.append(row)
        with open(result.metrics_path, "a", newline="") as f:
            csv.writer(f).writerow([epoch, f"{lr:.10g}", f"{train_loss:.8f}",
                                    f"{val_mpjpe:.6f}"])

        meta = {"epoch": epoch, "val_mpjpe_mm": val_mpjpe,
                "train_loss_m": train_loss}
        ckpt = out_dir / f"epoch_{epoch:03d}.ckpt"
        save_checkpoint(ckpt, model, meta=meta)
        result.final_checkpoint = str(ckpt)
        if val_mpjpe < result.best_val_mpjpe_mm:
            result.best_val_mpjpe_mm = val_mpjpe
            save_checkpoint(result.best_checkpoint, model, meta=meta)
    return result
