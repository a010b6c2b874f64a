"""Command-line front end wiring every pipeline stage together.

One executable, eight subcommands::

    raylift gen         synthesize a dataset (JSON lines)
    raylift train       fit a lifter, write checkpoints + metrics
    raylift eval        score a checkpoint under a view-subset policy
    raylift triangulate per-sample DLT baseline MPJPE
    raylift ablate      compare input featurizations side by side
    raylift sweep       MPJPE vs. camera azimuth (CSV + plot)
    raylift bench       forward-pass throughput grid
    raylift match       multi-person grouping + lifting demo

Experiment parameters live in a YAML config file with sections ``scene``,
``noise``, ``model``, ``train``, ``eval``; any field can be overridden on
the command line with ``--set section.field=value``. Every run writes a
``resolved_config.yaml`` snapshot beside its outputs so results can be
reproduced from the artifact directory alone.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
input, 64 usage error.
"""

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    CalibrationError,
    ConfigError,
    InvalidInputError,
    RayliftError,
)

log = logging.getLogger("raylift")

CONFIG_SECTIONS = ("scene", "noise", "model", "train", "eval")
SNAPSHOT_NAME = "resolved_config.yaml"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    """argparse front end whose usage failures exit 64, not 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------- config


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def load_config(path) -> dict:
    """Read the YAML experiment config; {} when no path is given."""
    if path is None:
        return {}
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping of sections")
    unknown = sorted(set(raw) - set(CONFIG_SECTIONS))
    if unknown:
        raise ConfigError(
            f"unknown config sections {unknown}; expected subset of "
            f"{list(CONFIG_SECTIONS)}")
    for name, section in raw.items():
        if section is not None and not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be a mapping")
    return {k: dict(v or {}) for k, v in raw.items()}


def apply_overrides(cfg: dict, assignments) -> dict:
    """Fold ``--set section.field=value`` pairs into the config dict."""
    out = {k: dict(v) for k, v in cfg.items()}
    for item in assignments or []:
        key, sep, text = item.partition("=")
        section, dot, field = key.partition(".")
        if not sep or not dot or not section or not field:
            raise ConfigError(
                f"override {item!r} must look like section.field=value")
        if section not in CONFIG_SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse override value {text!r}: {e}")
        out.setdefault(section, {})[field] = value
    return out


def build_section(cls, cfg: dict, section: str):
    """Instantiate a config dataclass from one config section."""
    mapping = cfg.get(section, {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - names)
    if unknown:
        raise ConfigError(
            f"unknown keys {unknown} in config section {section!r} "
            f"(valid: {sorted(names)})")
    return cls(**{k: _tuplify(v) for k, v in mapping.items()})


def policy_from_config(eval_cfg: dict):
    from .evaluation import EvalPolicy
    known = {"kind", "num_views", "draws", "subsets"}
    kwargs = {k: _tuplify(v) for k, v in eval_cfg.items() if k in known}
    return EvalPolicy(**kwargs)


def _plain(obj):
    """Strip numpy/tuple types so the snapshot is plain YAML."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def write_snapshot(out_dir: Path, resolved: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / SNAPSHOT_NAME, "w") as f:
        yaml.safe_dump(_plain(resolved), f, sort_keys=True,
                       default_flow_style=False)


def _write_rows_csv(path, rows, columns):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for r in rows:
            writer.writerow([r[c] for c in columns])


def _load_model(checkpoint):
    from .model import load_checkpoint
    model, _ = load_checkpoint(checkpoint)
    return model


# -------------------------------------------------------------- subcommands


def cmd_gen(args, cfg):
    from .synthgen import (
        NoiseModel, SceneConfig, ZERO_NOISE, generate_dataset,
        load_pose_library, write_dataset,
    )
    scene = build_section(SceneConfig, cfg, "scene")
    noise = ZERO_NOISE if args.noiseless else build_section(
        NoiseModel, cfg, "noise")
    library = load_pose_library(args.pose_library) if args.pose_library \
        else None
    seed = args.seed if args.seed is not None else 0
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = generate_dataset(scene, noise, args.num_samples, seed,
                               library=library)
    path = out_dir / "dataset.jsonl"
    write_dataset(samples, path)
    write_snapshot(out_dir, {
        "subcommand": "gen", "seed": seed, "num_samples": args.num_samples,
        "noiseless": bool(args.noiseless),
        "pose_library": args.pose_library,
        "scene": dataclasses.asdict(scene),
        "noise": dataclasses.asdict(noise),
    })
    print(f"wrote {len(samples)} samples to {path}")
    return EXIT_OK


def cmd_train(args, cfg):
    from .model import LifterConfig
    from .training import TrainConfig, train
    model_cfg = build_section(LifterConfig, cfg, "model")
    section = dict(cfg.get("train", {}))
    if args.seed is not None:
        section["seed"] = args.seed
    train_cfg = build_section(TrainConfig, {"train": section}, "train")
    out_dir = Path(args.out_dir)
    write_snapshot(out_dir, {
        "subcommand": "train",
        "train_data": str(args.train_data), "val_data": str(args.val_data),
        "model": dataclasses.asdict(model_cfg),
        "train": dataclasses.asdict(train_cfg),
    })
    result = train(model_cfg, train_cfg, args.train_data, args.val_data,
                   out_dir)
    print(f"best val MPJPE {result.best_val_mpjpe_mm:.3f} mm "
          f"({result.best_checkpoint})")
    return EXIT_OK


def cmd_eval(args, cfg):
    from .evaluation import evaluate
    eval_cfg = dict(cfg.get("eval", {}))
    policy = policy_from_config(eval_cfg)
    recenter = bool(args.recenter or eval_cfg.get("recenter", False))
    seed = args.seed if args.seed is not None else 0
    out_dir = Path(args.out_dir)
    write_snapshot(out_dir, {
        "subcommand": "eval", "seed": seed, "recenter": recenter,
        "checkpoint": str(args.checkpoint), "dataset": str(args.dataset),
        "eval": {"kind": policy.kind, "num_views": policy.num_views,
                 "draws": policy.draws,
                 "subsets": [list(s) for s in policy.subsets],
                 "max_mpjpe_mm": eval_cfg.get("max_mpjpe_mm")},
    })
    report = evaluate(args.checkpoint, args.dataset, policy,
                      recenter=recenter, seed=seed)
    report.to_json(out_dir / "report.json")
    report.to_csv(out_dir / "report.csv")
    agg = report.aggregate
    print(f"mpjpe_all {agg['mpjpe_all_mm']:.3f} mm  "
          f"mpjpe_star {agg['mpjpe_star_mm']:.3f} mm  "
          f"({report.sample_count} samples, {report.skipped} skipped)")
    limit = eval_cfg.get("max_mpjpe_mm")
    if limit is not None and not agg["mpjpe_all_mm"] <= float(limit):
        print(f"FAIL: mpjpe_all {agg['mpjpe_all_mm']:.3f} mm exceeds "
              f"configured limit {float(limit):.3f} mm", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_triangulate(args, cfg):
    from .evaluation import TriangulationLifter
    from .skeleton import mpjpe
    from .synthgen import read_dataset
    samples = read_dataset(args.dataset)
    lifter = TriangulationLifter(conf_weighted=not args.unweighted)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for sample in samples:
        rec = lifter.lift(sample.views)
        rows.append({"scene_id": sample.scene_id,
                     "mpjpe_mm": f"{mpjpe(sample.gt, rec):.6f}"})
    path = out_dir / "triangulation.csv"
    _write_rows_csv(path, rows, ["scene_id", "mpjpe_mm"])
    write_snapshot(out_dir, {
        "subcommand": "triangulate", "dataset": str(args.dataset),
        "conf_weighted": not args.unweighted,
    })
    mean = float(np.mean([float(r["mpjpe_mm"]) for r in rows])) \
        if rows else float("nan")
    print(f"triangulated {len(rows)} samples, mean MPJPE {mean:.6f} mm "
          f"({path})")
    return EXIT_OK


def cmd_ablate(args, cfg):
    from .evaluation import ablate_input_modality
    from .synthgen import read_dataset
    eval_cfg = dict(cfg.get("eval", {}))
    policy = policy_from_config(eval_cfg)
    seed = args.seed if args.seed is not None else 0
    models = [_load_model(p) for p in args.checkpoints]
    samples = read_dataset(args.dataset)
    rows = ablate_input_modality(samples, models, policy,
                                 recenter=bool(args.recenter), seed=seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_rows_csv(out_dir / "ablation.csv", rows,
                    ["input_mode", "mpjpe_all_mm", "mpjpe_star_mm"])
    write_snapshot(out_dir, {
        "subcommand": "ablate", "seed": seed, "dataset": str(args.dataset),
        "checkpoints": [str(p) for p in args.checkpoints],
        "recenter": bool(args.recenter),
    })
    for r in rows:
        print(f"{r['input_mode']:>14s}: {r['mpjpe_all_mm']:.3f} mm")
    return EXIT_OK


def cmd_sweep(args, cfg):
    from .evaluation import TriangulationLifter, angle_sweep
    from .synthgen import NoiseModel, ZERO_NOISE
    if args.checkpoint:
        model = _load_model(args.checkpoint)
    else:
        model = TriangulationLifter()
    noise = ZERO_NOISE if args.noiseless else build_section(
        NoiseModel, cfg, "noise")
    seed = args.seed if args.seed is not None else 0
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = angle_sweep(model, args.angles, heights=tuple(args.heights),
                       num_scenes=args.num_scenes, seed=seed, noise=noise,
                       recenter=bool(args.recenter),
                       csv_path=out_dir / "sweep.csv",
                       plot_path=out_dir / "sweep.png")
    write_snapshot(out_dir, {
        "subcommand": "sweep", "seed": seed,
        "checkpoint": str(args.checkpoint) if args.checkpoint else None,
        "angles_deg": [float(a) for a in args.angles],
        "heights": [float(h) for h in args.heights],
        "num_scenes": args.num_scenes, "noiseless": bool(args.noiseless),
        "recenter": bool(args.recenter),
        "noise": dataclasses.asdict(noise),
    })
    print(f"swept {len(rows)} (height, angle) cells -> {out_dir / 'sweep.csv'}")
    return EXIT_OK


def cmd_bench(args, cfg):
    from .evaluation import bench_speed
    from .model import LifterConfig, PoseLifter
    if args.checkpoint:
        model = _load_model(args.checkpoint)
    else:
        model = PoseLifter(build_section(LifterConfig, cfg, "model"))
    seed = args.seed if args.seed is not None else 0
    rows = bench_speed(model, repeats=args.repeats, seed=seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_rows_csv(out_dir / "bench.csv", rows, ["views", "batch", "fps"])
    write_snapshot(out_dir, {
        "subcommand": "bench", "seed": seed, "repeats": args.repeats,
        "checkpoint": str(args.checkpoint) if args.checkpoint else None,
        "model": dataclasses.asdict(model.config),
    })
    for r in rows:
        print(f"views={r['views']} batch={r['batch']}: {r['fps']:.1f} fps")
    return EXIT_OK


def cmd_match(args, cfg):
    from .evaluation import TriangulationLifter
    from .multiperson import ap100, lift_scene, match_people, read_scenes
    model = _load_model(args.checkpoint) if args.checkpoint \
        else TriangulationLifter()
    scenes = read_scenes(args.scenes)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results, scores = [], []
    for people, views, scene_id in scenes:
        groups = match_people(views, threshold=args.threshold)
        lifted = lift_scene(views, groups, model)
        entry = {
            "scene_id": scene_id,
            "groups": [{str(v): d for v, d in sorted(g.items())}
                       for g in groups],
            "lifted": [sorted(g.items()) for g, _ in lifted],
        }
        if people:
            score = ap100([pose for _, pose in lifted], people)
            entry["ap100"] = score
            scores.append(score)
        results.append(entry)
    path = out_dir / "matches.json"
    with open(path, "w") as f:
        json.dump(results, f, indent=2, sort_keys=True)
    write_snapshot(out_dir, {
        "subcommand": "match", "scenes": str(args.scenes),
        "threshold": float(args.threshold),
        "checkpoint": str(args.checkpoint) if args.checkpoint else None,
    })
    if scores:
        print(f"matched {len(results)} scenes, mean AP@100mm "
              f"{float(np.mean(scores)):.3f} ({path})")
    else:
        print(f"matched {len(results)} scenes ({path})")
    return EXIT_OK


# ------------------------------------------------------------------ parsing


def build_parser() -> _Parser:
    parser = _Parser(prog="raylift",
                     description="multi-view 2D-to-3D pose lifting toolkit")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--set", action="append", metavar="SECTION.FIELD=V",
                        dest="overrides", help="override one config field")
    common.add_argument("--out-dir", required=True,
                        help="directory for artifacts + config snapshot")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=None,
                        help="cap worker threads")
    common.add_argument("-v", "--verbose", action="count", default=0)

    sub = parser.add_subparsers(dest="subcommand", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common],
                       help="generate a synthetic dataset")
    p.add_argument("--num-samples", type=int, required=True)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--pose-library", help=".npy/.json pose bank")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train a lifter")
    p.add_argument("--train-data", required=True)
    p.add_argument("--val-data", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--recenter", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("triangulate", parents=[common],
                       help="DLT baseline, per-sample MPJPE CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--unweighted", action="store_true",
                   help="ignore confidences in the DLT weights")
    p.set_defaults(func=cmd_triangulate)

    p = sub.add_parser("ablate", parents=[common],
                       help="compare input featurizations")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--recenter", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", parents=[common],
                       help="MPJPE vs camera azimuth")
    p.add_argument("--checkpoint",
                   help="lifter checkpoint (default: triangulation)")
    p.add_argument("--angles", type=float, nargs="+",
                   default=[15, 30, 45, 60, 75, 90, 105, 120, 135, 150, 165])
    p.add_argument("--heights", type=float, nargs="+", default=[2.2, 3.2, 4.0])
    p.add_argument("--num-scenes", type=int, default=50)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--recenter", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", parents=[common],
                       help="throughput over a views x batch grid")
    p.add_argument("--checkpoint")
    p.add_argument("--repeats", type=int, default=30)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("match", parents=[common],
                       help="group + lift multi-person scenes")
    p.add_argument("--scenes", required=True, help="scene JSON-lines file")
    p.add_argument("--checkpoint")
    p.add_argument("--threshold", type=float, default=20.0,
                   help="epipolar gate in pixels")
    p.set_defaults(func=cmd_match)
    return parser


def run(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else
        logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        import torch
        torch.set_num_threads(args.jobs)
    cfg = apply_overrides(load_config(args.config), args.overrides)
    return args.func(args, cfg)


def main(argv=None) -> int:
    try:
        return run(sys.argv[1:] if argv is None else list(argv))
    except (ConfigError, InvalidInputError, CalibrationError) as e:
        print(f"raylift: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except (RayliftError, OSError, RuntimeError) as e:
        print(f"raylift: error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
