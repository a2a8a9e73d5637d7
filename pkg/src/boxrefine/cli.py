"""``boxrefine`` command line.

Exit codes: 0 success, 1 invalid input or failed check, 2 runtime abort.
"""
import argparse
import json
import os
import sys

import numpy as np

from .config import ConfigError, dump_config, load_config, override
from .dqn import (NetPolicy, OraclePolicy, RandomPolicy, config_hash, load_checkpoint,
                  save_checkpoint)
from .env import write_trajectory
from .geometry import BehindCamera, Box3D, CameraModel, iou_3d
from .oracle import compare_iou
from .pipeline import make_probe, refine_scene, report, run_training
from .render import build_state, save_state
from .scene import (JitterSpec, MissingCalibration, ParseError, Scene, box_to_object,
                    export_scene, format_label_line, generate_scene, jitter, load_kitti_labels,
                    parse_calib, parse_labels)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class CheckFailed(Exception):
    pass


def _add_common(p):
    p.add_argument("--config", help="JSON config (default: $BOXREFINE_CONFIG, then built-in defaults)")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="maximum refinement steps per episode")
    p.add_argument("--stride", type=float, help="translation and size stride as a fraction of the dimension")
    p.add_argument("--epsilon", type=float, help="exploration rate when refining")
    p.add_argument("--mode", choices=["parameter_aware", "direct_projection"])
    p.add_argument("--frame", choices=["axial", "world"])
    p.add_argument("--deterministic", action="store_true", help="refine greedily (epsilon 0)")


def effective_config(args):
    cfg = load_config(args.config)
    changes = {}
    for flag, path in (("seed", "seed"), ("steps", "episode.max_steps"), ("stride", "episode.delta"),
                       ("epsilon", "episode.eval_epsilon"), ("mode", "render.mode"),
                       ("frame", "episode.action_frame")):
        if getattr(args, flag, None) is not None:
            changes[path] = getattr(args, flag)
    if getattr(args, "deterministic", False):
        changes["episode.eval_epsilon"] = 0.0
    return override(cfg, **changes) if changes else cfg


def _policy(args, cfg):
    if args.policy == "oracle":
        return OraclePolicy()
    if args.policy == "random":
        return RandomPolicy()
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required with --policy net")
    net, meta = load_checkpoint(args.checkpoint)
    if meta["hash"] != config_hash(cfg.compat()):
        raise ConfigError(f"{args.checkpoint}: checkpoint was trained with different net/render/frame settings")
    return NetPolicy(net, cfg.episode.eval_epsilon)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --- commands --------------------------------------------------------------------

def cmd_train(args):
    cfg = effective_config(args)
    if args.no_pretrain:
        cfg = override(cfg, pretrain=False)
    os.makedirs(args.out, exist_ok=True)
    dump_config(cfg, os.path.join(args.out, "config.json"))
    log_path = os.path.join(args.out, "train_log.jsonl")
    with open(log_path, "w") as log:
        def write(rec):
            log.write(json.dumps(rec) + "\n")
        net, _, summary = run_training(cfg, iterations=args.iterations, log=write)
    save_checkpoint(os.path.join(args.out, "checkpoint.npz"), net, cfg.compat())
    summary.pop("seconds")
    _write_json(os.path.join(args.out, "summary.json"), summary)
    print(f"probe IoU {summary['initial_iou']:.3f} -> {summary['final_iou']:.3f} "
          f"(gain {summary['gain']:+.3f}, random {summary['random_final_iou']:.3f})")
    return EXIT_OK


def _read(path):
    with open(path) as fh:
        return fh.read()


def cmd_refine(args):
    cfg = effective_config(args)
    policy = _policy(args, cfg)
    if args.synthetic is not None:
        scene = generate_scene(args.synthetic, cfg.scenes)
        cam = scene.camera
        truth = scene.objects
        if args.detections:
            rows = parse_labels(_read(args.detections))
        else:
            rng = np.random.default_rng(cfg.seed)
            one = JitterSpec(*cfg.jitter.sigmas(), samples_per_object=1)
            rows = [box_to_object(jitter(gt, one, cam, rng)[0], cam, score=1.0) for gt in truth]
    else:
        if not (args.detections and args.calib):
            raise ConfigError("refine needs --detections and --calib, or --synthetic")
        image = None
        if args.image:
            from PIL import Image
            image = np.asarray(Image.open(args.image).convert("RGB"))
        if image is None:
            raise ConfigError("--image is required for non-synthetic refinement")
        cam = parse_calib(_read(args.calib), (image.shape[1], image.shape[0]))
        rows = parse_labels(_read(args.detections))
        scene = Scene(cam, image)
        truth = load_kitti_labels(_read(args.labels), _read(args.calib), image=image).objects if args.labels else None
    cars = [i for i, r in enumerate(rows) if r.is_car and r.box is not None]
    gts = None
    if truth:
        # each detection is scored against its best-overlapping ground-truth box
        gts = [max(truth, key=lambda g: iou_3d(g, rows[i].box)) for i in cars]
    if args.policy == "oracle" and gts is None:
        raise ConfigError("the oracle policy needs ground truth (--synthetic or --labels)")
    results = refine_scene(policy, scene, [rows[i].box for i in cars], cfg, cfg.seed, gts)
    out_rows = list(rows)
    for i, res in zip(cars, results):
        out_rows[i] = box_to_object(res.box, cam, template=rows[i])
    with open(args.out, "w") as fh:
        fh.write("".join(r.raw + "\n" if not (r.is_car and r.box is not None) else format_label_line(r) + "\n"
                         for r in out_rows))
    if args.trajectory:
        with open(args.trajectory, "w") as fh:
            for obj, res in zip(cars, results):
                write_trajectory([dict(rec, row=obj, aborted=res.aborted) for rec in res.trajectory], fh)
    aborted = sum(r.aborted for r in results)
    if gts:
        before = np.mean([iou_3d(rows[i].box, g) for i, g in zip(cars, gts)])
        after = np.mean([iou_3d(r.box, g) for r, g in zip(results, gts)])
        print(f"refined {len(cars)} boxes, mean IoU {before:.3f} -> {after:.3f}, {aborted} aborted")
    else:
        print(f"refined {len(cars)} boxes, {aborted} aborted")
    return EXIT_OK


def cmd_render_mask(args):
    cfg = effective_config(args)
    box = Box3D(*args.box)
    if args.calib:
        cam = parse_calib(_read(args.calib), tuple(args.image_size))
    else:
        cam = CameraModel.kitti_like(cfg.scenes.camera_scale)
    if args.image:
        from PIL import Image
        image = np.asarray(Image.open(args.image).convert("RGB"))
    else:
        image = np.zeros((cam.image_height, cam.image_width, 3), np.uint8)
    size = args.size or cfg.render.size
    state = build_state(box, image, cam, cfg.render.mode, size, cfg.render.palette, cfg.render.enlarge)
    paths = save_state(state, args.out, args.frame_id, 0, 0)
    print("\n".join(paths))
    return EXIT_OK


def cmd_iou_oracle(args):
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    pairs = compare_iou(args.trials, args.samples, seed=args.seed if args.seed is not None else 0)
    dev = np.abs(pairs[:, 0] - pairs[:, 1])
    print(json.dumps({"trials": args.trials, "samples": args.samples, "max_abs_dev": float(dev.max()),
                      "mean_abs_dev": float(dev.mean())}, sort_keys=True))
    if dev.max() > args.tolerance:
        raise CheckFailed(f"max deviation {dev.max():.4f} exceeds {args.tolerance}")
    return EXIT_OK


def cmd_eval(args):
    cfg = effective_config(args)
    policy = _policy(args, cfg)
    spec = cfg.jitter
    if args.zero_jitter:
        spec = JitterSpec(0, 0, 0, 0, 0, 0, 0)
    probe = make_probe(cfg, count=args.episodes, scene_seed=args.scene_seed, jitter_spec=spec)
    rep = report(policy, probe, cfg, seed=cfg.seed)
    rep["policy"] = args.policy
    text = json.dumps(rep, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_export_scenes(args):
    cfg = effective_config(args)
    start = cfg.seed if args.seed is not None else 0
    for i in range(args.count):
        export_scene(generate_scene(start + i, cfg.scenes), args.out, f"{start + i:06d}")
    print(f"wrote {args.count} scenes to {args.out}")
    return EXIT_OK


def cmd_dump_config(args):
    cfg = effective_config(args)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="boxrefine", description="Iterative 3D box refinement with a DQN policy.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="pretrain and train a policy on synthetic scenes")
    _add_common(p)
    p.add_argument("--iterations", type=int, help="RL iterations (default from config)")
    p.add_argument("--no-pretrain", action="store_true")
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("refine", help="refine KITTI-format detections")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--policy", choices=["net", "oracle", "random"], default="net")
    p.add_argument("--detections")
    p.add_argument("--calib")
    p.add_argument("--image")
    p.add_argument("--labels", help="ground-truth label file, for IoU reporting")
    p.add_argument("--synthetic", type=int, metavar="SCENE_SEED", help="use a generated scene")
    p.add_argument("--out", required=True)
    p.add_argument("--trajectory", help="JSONL trajectory log")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("render-mask", help="write the image and mask patches of one box")
    _add_common(p)
    p.add_argument("--box", type=float, nargs=7, required=True, metavar=("X", "Y", "Z", "H", "W", "L", "THETA"))
    p.add_argument("--calib")
    p.add_argument("--image-size", type=int, nargs=2, default=(1242, 375), metavar=("W", "H"))
    p.add_argument("--image")
    p.add_argument("--size", type=int)
    p.add_argument("--frame-id", default="box")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_render_mask)

    p = sub.add_parser("iou-oracle", help="compare analytic 3D IoU against Monte-Carlo sampling")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--tolerance", type=float, default=0.01)
    p.set_defaults(func=cmd_iou_oracle)

    p = sub.add_parser("eval", help="metrics report on jittered synthetic probe episodes")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--policy", choices=["net", "oracle", "random"], default="net")
    p.add_argument("--episodes", type=int)
    p.add_argument("--scene-seed", type=int)
    p.add_argument("--zero-jitter", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-scenes", help="write synthetic scenes as KITTI image/label/calib files")
    _add_common(p)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_scenes)

    p = sub.add_parser("dump-config", help="print the effective configuration")
    _add_common(p)
    p.set_defaults(func=cmd_dump_config)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, MissingCalibration, CheckFailed, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except BehindCamera as exc:
        print(f"error: box is behind the camera: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
