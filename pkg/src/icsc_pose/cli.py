"""Command-line front end: dataset generation, training, evaluation,
overlays, gradient checks, and the loss comparison, all driven by one
config file plus a few override flags.

Exit codes: 0 success, 1 check or training failure, 2 usage/config error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
from PIL import Image

from . import config as cfgmod
from .checkpoint import Checkpoint
from .dataset import generate_dataset, load_split, read_manifest
from .geometry import CameraIntrinsics, CylinderModel, Pose
from .gradcheck import SCOPES, format_report, run_gradcheck
from .metrics import write_predictions
from .renderer import SceneGeometry, render_overlay
from .training import (
    TrainConfig,
    evaluate_checkpoint,
    format_comparison,
    run_comparison,
    train,
)

SEED_ENV = "ICSC_POSE_SEED"


def _resolve_seed(flag_value, config_value: int) -> int:
    if flag_value is not None:
        return flag_value
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"{SEED_ENV} must be an integer, got {env!r}")
    return config_value


def _scene_from_header(header: dict) -> SceneGeometry:
    s = header["scene"]
    return SceneGeometry(cylinder=CylinderModel(r0=s["r0"], h0=s["h0"]),
                         visible_length=s["visible_length"],
                         visible_center_y=s["visible_center_y"],
                         wall_x=s["wall_x"])


def _intr_from_header(header: dict) -> CameraIntrinsics:
    i = header["intrinsics"]
    return CameraIntrinsics(horizontal_fov=i["horizontal_fov"], aspect=i["aspect"],
                            resolution=tuple(i["resolution"]))


def _dataset_id(path: str) -> str:
    return os.path.basename(os.path.normpath(path))


def cmd_gen_dataset(args) -> int:
    cfg = cfgmod.load_config(args.config)
    d = cfg["dataset"]
    count = args.count if args.count is not None else d["count"]
    split = args.split if args.split is not None else d["split"]
    if split is not None and split >= count:
        split = None
    seed = _resolve_seed(args.seed, d["seed"])
    jobs = args.jobs if args.jobs is not None else d["jobs"]
    generate_dataset(args.out, count, seed,
                     bounds=cfgmod.bounds_from_config(cfg),
                     intr=cfgmod.intrinsics_from_config(cfg),
                     geo=cfgmod.scene_from_config(cfg),
                     jobs=jobs, split=split)
    bounds = cfg["bounds"]
    print(f"generated {count} images in {args.out} (seed {seed}, "
          f"split {split if split is not None else 'none'})")
    print(f"position bounds {bounds['position_min']} .. {bounds['position_max']}, "
          f"pan {bounds['pan_deg']}, tilt {bounds['tilt_deg']}")
    return 0


def _load_train_val(dataset_dir: str, input_size: int):
    header, _ = read_manifest(dataset_dir)
    if header.get("split") is None:
        images, poses = load_split(dataset_dir, input_size)
        return images, poses, None, None
    tr = load_split(dataset_dir, input_size, "train")
    va = load_split(dataset_dir, input_size, "val")
    return tr[0], tr[1], va[0], va[1]


def cmd_train(args) -> int:
    cfg = cfgmod.load_config(args.config)
    t = dict(cfg["training"])
    if args.loss is not None:
        t["loss"] = args.loss
    if args.beta is not None:
        t["beta"] = args.beta
    if args.epochs is not None:
        t["epochs"] = args.epochs
    t["seed"] = _resolve_seed(args.seed, t["seed"])
    train_cfg = TrainConfig(**t)
    model_cfg = cfgmod.model_from_config(cfg)
    cylinder = cfgmod.cylinder_from_config(cfg)

    tr_img, tr_pose, va_img, va_pose = _load_train_val(args.dataset,
                                                       model_cfg.input_size)
    result = train(model_cfg, tr_img, tr_pose, va_img, va_pose, train_cfg,
                   cylinder=cylinder, out_dir=args.out, verbose=not args.quiet)
    violations = result.s_bound_violations()
    if violations:
        print(f"warning: log-variance bound violated: {', '.join(violations)}",
              file=sys.stderr)
    print(f"best epoch {result.best_epoch} (selection loss "
          f"{result.best_val_loss:.6f}); checkpoint: {result.checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    images, poses = load_split(args.dataset, ckpt.model_config.input_size,
                               args.subset)
    report, preds = evaluate_checkpoint(ckpt, images, poses,
                                        dataset_id=_dataset_id(args.dataset))
    print(report.format_table())
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "metrics.json")
        with open(path, "w") as fh:
            fh.write(report.to_json() + "\n")
        print(f"report written to {path}")
    if args.predictions is not None:
        write_predictions(args.predictions, preds, poses)
        print(f"predictions written to {args.predictions}")
    return 0


def cmd_overlay(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    header, records = read_manifest(args.dataset)
    geo = _scene_from_header(header)
    intr = _intr_from_header(header)
    os.makedirs(args.out, exist_ok=True)

    if args.worst is not None:
        images, poses = load_split(args.dataset, ckpt.model_config.input_size)
        _, preds = evaluate_checkpoint(ckpt, images, poses)
        errors = np.linalg.norm(preds[:, :3] - poses[:, :3], axis=1)
        indices = [int(i) for i in np.argsort(errors)[::-1][:args.worst]]
    else:
        indices = [args.index]

    from .dataset import load_image

    for idx in indices:
        rec = records[idx]
        base = np.asarray(Image.open(os.path.join(args.dataset, rec.filename))
                          .convert("RGB"))
        if args.truth:
            pose = rec.pose
        else:
            img = load_image(os.path.join(args.dataset, rec.filename),
                             ckpt.model_config.input_size)
            from .training import model_from_checkpoint, predict

            pred = predict(model_from_checkpoint(ckpt), img[None])[0]
            pose = Pose.from_vector(pred)
        out = render_overlay(base, pose, intr, geo)
        path = os.path.join(args.out, f"overlay_{idx:06d}.png")
        Image.fromarray(out).save(path)
        print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    scopes = SCOPES if args.scope == "all" else (args.scope,)
    seed = _resolve_seed(args.seed, 0)
    checks = run_gradcheck(scopes, seed=seed, trials=args.trials)
    print(format_report(checks))
    return 0 if all(c.passed for c in checks) else 1


def cmd_config(args) -> int:
    if args.action == "dump-defaults":
        print(cfgmod.dump_defaults())
        return 0
    raise ValueError(f"unknown config action: {args.action!r}")


def cmd_compare(args) -> int:
    cfg = cfgmod.load_config(args.config)
    t = dict(cfg["training"])
    if args.epochs is not None:
        t["epochs"] = args.epochs
    base = TrainConfig(**t)
    model_cfg = cfgmod.model_from_config(cfg)
    cylinder = cfgmod.cylinder_from_config(cfg)
    seeds = [int(s) for s in args.seeds.split(",")]
    if len(seeds) < 3:
        raise ValueError("comparison needs at least 3 seeds")

    tr_img, tr_pose, va_img, va_pose = _load_train_val(args.dataset,
                                                       model_cfg.input_size)
    te_img, te_pose = load_split(args.testset, model_cfg.input_size)
    results = run_comparison(model_cfg, tr_img, tr_pose, va_img, va_pose,
                             te_img, te_pose, base, seeds=tuple(seeds),
                             cylinder=cylinder, verbose=not args.quiet)
    print(format_comparison(results))
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "comparison.json")
        with open(path, "w") as fh:
            json.dump(results, fh, indent=2)
        print(f"comparison written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icsc-pose",
                                description="cylinder-scene camera pose "
                                            "estimation pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", help="render a randomized dataset")
    g.add_argument("--config", default=None)
    g.add_argument("--count", type=int, default=None)
    g.add_argument("--split", type=int, default=None,
                   help="number of leading records marked as training")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--jobs", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_dataset)

    t = sub.add_parser("train", help="train a pose regressor")
    t.add_argument("dataset")
    t.add_argument("--config", default=None)
    t.add_argument("--loss", choices=("beta", "learnable", "icsc"), default=None)
    t.add_argument("--beta", type=float, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True)
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("checkpoint")
    e.add_argument("dataset")
    e.add_argument("--subset", choices=("all", "train", "val"), default="all")
    e.add_argument("--out", default=None)
    e.add_argument("--predictions", default=None)
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("overlay", help="render silhouette overlays")
    o.add_argument("checkpoint")
    o.add_argument("dataset")
    o.add_argument("--index", type=int, default=0)
    o.add_argument("--truth", action="store_true",
                   help="overlay the ground-truth pose instead of the prediction")
    o.add_argument("--worst", type=int, default=None,
                   help="overlay the N images with the largest position error")
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_overlay)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--scope", choices=SCOPES + ("all",), default="all")
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--trials", type=int, default=100)
    c.set_defaults(func=cmd_gradcheck)

    k = sub.add_parser("config", help="configuration utilities")
    k.add_argument("action", choices=("dump-defaults",))
    k.set_defaults(func=cmd_config)

    m = sub.add_parser("compare", help="train ICSC vs baseline over seeds")
    m.add_argument("dataset", help="training dataset (with split marker)")
    m.add_argument("testset", help="held-out dataset for the final metrics")
    m.add_argument("--config", default=None)
    m.add_argument("--epochs", type=int, default=None)
    m.add_argument("--seeds", default="1,2,3")
    m.add_argument("--out", default=None)
    m.add_argument("--quiet", action="store_true")
    m.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FloatingPointError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
