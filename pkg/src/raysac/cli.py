"""Command-line entry points: scene generation, the two training stages,
rendering, evaluation, and metric curve plotting.

Exit codes: 0 success, 2 usage, 3 data or validation failure, 4 numerical
divergence.  Every run is deterministic under --seed on a single thread, and
every artifact embeds or sits beside the resolved run configuration.
"""

import os
import sys


def _cap_threads():
    # BLAS pools are sized when numpy loads, so this must run before the
    # first numpy import anywhere in the process.  Default is one thread
    # for reproducibility; an explicit --threads wins over the environment.
    n, explicit = "1", False
    av = sys.argv[1:]
    for i, a in enumerate(av):
        if a == "--threads" and i + 1 < len(av):
            n, explicit = av[i + 1], True
        elif a.startswith("--threads="):
            n, explicit = a.split("=", 1)[1], True
    try:
        int(n)
    except ValueError:
        return  # argparse will reject it with a proper usage error
    for k in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
              "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        if explicit:
            os.environ[k] = n
        else:
            os.environ.setdefault(k, n)


_cap_threads()

import argparse
import dataclasses
import json

import numpy as np

from . import pipeline
from .env import EnvConfig
from .field import FieldConfig
from .pipeline import SAMPLERS, TrainConfig
from .ppm import write_ppm
from .sac import SacConfig
from .scenes import (SceneOracle, load_pose_json, make_preset,
                     make_preset_cameras, synthesize_dataset, write_pose_json)

PRESETS = ("slab", "spheres", "boxes")


class UsageError(Exception):
    pass


# -- configuration plumbing --------------------------------------------

_GROUP_TYPES = {"env": EnvConfig, "field": FieldConfig, "sac": SacConfig}


def _coerce(default, value, key):
    if isinstance(default, bool):
        if isinstance(value, (bool, int)):
            return bool(value)
        raise ValueError(f"config key {key}: expected a boolean, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, float) and value != int(value):
            raise ValueError(f"config key {key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, (tuple, list)):
        return tuple(value)
    return value  # None-default fields (e.g. target entropy) pass through


def train_config_from_flat(flat: dict) -> TrainConfig:
    """Resolve flat dotted keys ("env.n_samples", "lr_field", ...) into a
    TrainConfig; unknown keys raise a ValueError naming the key."""
    base = TrainConfig()
    top = {f.name: getattr(base, f.name) for f in dataclasses.fields(TrainConfig)
           if f.name not in ("env", "field_cfg", "sac")}
    groups = {"env": dataclasses.asdict(base.env),
              "field": dataclasses.asdict(base.field_cfg),
              "sac": dataclasses.asdict(base.sac)}
    for key, value in flat.items():
        if "." in key:
            g, sub = key.split(".", 1)
            if g not in groups or sub not in groups[g]:
                raise ValueError(f"unknown config key: {key}")
            groups[g][sub] = _coerce(groups[g][sub], value, key)
        elif key in top:
            top[key] = _coerce(top[key], value, key)
        else:
            raise ValueError(f"unknown config key: {key}")
    return TrainConfig(env=groups["env"], field_cfg=groups["field"],
                       sac=groups["sac"], **top)


def flatten_train_config(config: TrainConfig) -> dict:
    d = config.to_dict()
    flat = {}
    for k, v in d.items():
        if k in ("env", "field", "sac"):
            for sub, sv in v.items():
                flat[f"{k}.{sub}"] = sv
        else:
            flat[k] = v
    return flat


_FLAG_KEYS = (  # (args attribute, dotted config key)
    ("stage1_iters", "stage1_iters"),
    ("stage2_steps", "stage2_steps"),
    ("lr_field", "lr_field"),
    ("lr_sac", "lr_sac"),
    ("batch_rays", "batch_rays"),
    ("stage1_samples", "stage1_n_samples"),
    ("lambda_reg", "lambda_reg"),
    ("log_interval", "log_interval"),
    ("n_samples", "env.n_samples"),
    ("t_ep", "env.T_ep"),
    ("warmup_steps", "sac.warmup_steps"),
    ("sac_batch", "sac.batch_size"),
    ("capacity", "sac.capacity"),
)


def resolve_flat(args, base=None) -> dict:
    """Merge base dict <- config file <- explicit flags, in that order."""
    flat = dict(base or {})
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        with open(cfg_path) as f:
            try:
                obj = json.load(f)
            except json.JSONDecodeError as e:
                raise ValueError(f"malformed config file {cfg_path}: {e}") from e
        if not isinstance(obj, dict):
            raise ValueError(f"config file {cfg_path} must be a JSON object "
                             "of dotted keys")
        flat.update(obj)
    for attr, key in _FLAG_KEYS:
        v = getattr(args, attr, None)
        if v is not None:
            flat[key] = v
    if getattr(args, "seed", None) is not None:
        flat["seed"] = args.seed
    if getattr(args, "timing", False):
        flat["timing"] = True
    return flat


def run_config_dict(args, flat) -> dict:
    rc = {"command": args.command, "threads": args.threads}
    for k in ("scene_dir", "out", "field_ckpt", "policy_ckpt", "sampler",
              "split", "view", "preset", "width", "height", "n_dense"):
        v = getattr(args, k, None)
        if v is not None:
            rc[k] = v
    rc["config"] = dict(sorted(flat.items()))
    return rc


def write_run_config(path, rc):
    with open(path, "w") as f:
        json.dump(rc, f, sort_keys=True, indent=1)
        f.write("\n")


# -- scene directory I/O ------------------------------------------------

def load_scene_dir(scene_dir, split):
    """Returns (oracle, dataset) for one split of a generated scene dir."""
    sj = os.path.join(scene_dir, "scene.json")
    if not os.path.exists(sj):
        raise FileNotFoundError(f"{sj}: not a scene directory (run gen-scene)")
    with open(sj) as f:
        obj = json.load(f)
    for k in ("bounds", "primitives"):
        if k not in obj:
            raise ValueError(f"{sj} missing config key: {k}")
    oracle = SceneOracle.from_json(obj)
    ds = load_pose_json(os.path.join(scene_dir, f"transforms_{split}.json"),
                        split=split)
    return oracle, ds


# -- commands -----------------------------------------------------------

def cmd_gen_scene(args):
    if args.preset not in PRESETS:
        raise UsageError(f"unknown preset {args.preset!r} "
                         f"(have: {', '.join(PRESETS)})")
    oracle = make_preset(args.preset)
    train_cams, test_cams = make_preset_cameras(args.preset,
                                                args.width, args.height)
    os.makedirs(args.out, exist_ok=True)
    train_ds = synthesize_dataset(oracle, train_cams, n_dense=args.n_dense)
    test_ds = synthesize_dataset(oracle, test_cams, n_dense=args.n_dense,
                                 split="test")
    scene = dict(oracle.to_json())
    scene.update({"preset": args.preset, "width": args.width,
                  "height": args.height, "n_dense": args.n_dense})
    with open(os.path.join(args.out, "scene.json"), "w") as f:
        json.dump(scene, f, sort_keys=True, indent=1)
        f.write("\n")
    write_pose_json(os.path.join(args.out, "transforms_train.json"), train_ds)
    write_pose_json(os.path.join(args.out, "transforms_test.json"), test_ds)
    write_run_config(os.path.join(args.out, "run_config.json"),
                     run_config_dict(args, {}))
    print(f"wrote {args.preset} scene ({len(train_ds.views)} train / "
          f"{len(test_ds.views)} test views) to {args.out}")
    return 0


def cmd_pretrain(args):
    oracle, ds = load_scene_dir(args.scene_dir, "train")
    flat = resolve_flat(args)
    config = train_config_from_flat(flat)
    os.makedirs(args.out, exist_ok=True)
    rc = run_config_dict(args, flatten_train_config(config))
    write_run_config(os.path.join(args.out, "run_config.json"), rc)
    ckpt = os.path.join(args.out, "field.ckpt")
    _, rows = pipeline.stage1_pretrain(
        ds, (oracle.t_near, oracle.t_far), config,
        ckpt_path=ckpt, metrics_path=os.path.join(args.out, "stage1_metrics.csv"))
    tail = f", final psnr {rows[-1]['psnr']:.2f} dB" if rows else ""
    print(f"stage 1 done: {config.stage1_iters} iters{tail}; "
          f"checkpoint {ckpt}")
    return 0


def cmd_train_policy(args):
    field, field_tc = pipeline.load_field_checkpoint(args.field_ckpt)
    oracle, ds = load_scene_dir(args.scene_dir, "train")
    flat = resolve_flat(args, base=flatten_train_config(field_tc))
    config = train_config_from_flat(flat)
    for key, had, want in (("env.n_samples", field_tc.env.n_samples,
                            config.env.n_samples),
                           ("env.K", field_tc.env.K, config.env.K)):
        if had != want:
            raise ValueError(f"{key} mismatch: checkpoint was trained with "
                             f"{had}, flags request {want}")
    if dataclasses.asdict(config.field_cfg) != dataclasses.asdict(field_tc.field_cfg):
        raise ValueError("field architecture overrides are not allowed when "
                         "training against an existing field checkpoint")
    os.makedirs(args.out, exist_ok=True)
    rc = run_config_dict(args, flatten_train_config(config))
    write_run_config(os.path.join(args.out, "run_config.json"), rc)
    ckpt = os.path.join(args.out, "policy.ckpt")
    _, rows = pipeline.stage2_train_policy(
        field, ds, (oracle.t_near, oracle.t_far), config,
        ckpt_path=ckpt, metrics_path=os.path.join(args.out, "stage2_metrics.csv"))
    tail = (f", final effective rate {rows[-1]['effective_rate']:.3f}"
            if rows else "")
    print(f"stage 2 done: {config.stage2_steps} env steps{tail}; "
          f"checkpoint {ckpt}")
    return 0


def _load_policy_for(args, field_tc):
    if not args.policy_ckpt:
        raise UsageError("sampler=policy requires --policy-ckpt")
    agent, policy_tc = pipeline.load_policy_checkpoint(args.policy_ckpt)
    if policy_tc.env.n_samples != field_tc.env.n_samples:
        raise ValueError(f"env.n_samples mismatch: policy checkpoint has "
                         f"{policy_tc.env.n_samples}, field checkpoint has "
                         f"{field_tc.env.n_samples}")
    return agent, policy_tc


def cmd_render(args):
    field, field_tc = pipeline.load_field_checkpoint(args.field_ckpt)
    oracle, ds = load_scene_dir(args.scene_dir, args.split)
    if not 0 <= args.view < len(ds.views):
        raise ValueError(f"view {args.view} out of range "
                         f"(split {args.split} has {len(ds.views)} views)")
    agent, env_cfg = None, field_tc.env
    if args.sampler == "policy":
        agent, policy_tc = _load_policy_for(args, field_tc)
        env_cfg = policy_tc.env
        if args.n_samples is not None and args.n_samples != env_cfg.n_samples:
            raise ValueError(f"env.n_samples mismatch: policy acts on "
                             f"{env_cfg.n_samples} samples, flags request "
                             f"{args.n_samples}")
    cam, gt = ds.views[args.view]
    img, stats = pipeline.render_view(
        field, cam, (oracle.t_near, oracle.t_far), args.sampler, env_cfg,
        agent=agent, n_samples=args.n_samples, gt_img=gt,
        seed=args.seed if args.seed is not None else 0)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_ppm(args.out, img)
    write_run_config(args.out + ".run_config.json",
                     run_config_dict(args, resolve_flat(args)))
    print(f"wrote {args.out} ({img.shape[1]}x{img.shape[0]}, "
          f"effective rate {stats['effective_rate']:.3f})")
    return 0


def cmd_evaluate(args):
    field, field_tc = pipeline.load_field_checkpoint(args.field_ckpt)
    oracle, ds = load_scene_dir(args.scene_dir, args.split)
    agent, env_cfg = None, field_tc.env
    if args.sampler == "policy":
        agent, policy_tc = _load_policy_for(args, field_tc)
        env_cfg = policy_tc.env
    rc = run_config_dict(args, resolve_flat(args))
    report = pipeline.evaluate(
        field, ds, (oracle.t_near, oracle.t_far), args.sampler, env_cfg,
        agent=agent, n_samples=args.n_samples,
        seed=args.seed if args.seed is not None else 0,
        timing=args.timing, run_config=rc)
    report["run_config"] = rc
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    pipeline.write_report(args.out, report)
    agg = report["aggregate"]
    print(f"{args.sampler}: psnr {agg['psnr']:.2f} dB, ssim {agg['ssim']:.4f}, "
          f"effective rate {agg['effective_rate']:.3f} -> {args.out}")
    return 0


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
            "#17becf", "#e377c2")


def render_curves_svg(xs, series, width=900, height=360, margin=40):
    """One polyline per series, each normalized to its own [min, max] band.

    series: list of (name, values); xs are shared x coordinates.
    """
    if not xs:
        raise ValueError("no data rows")
    span_x = max(xs) - min(xs) or 1.0
    x0 = min(xs)
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<rect x="{margin}" y="{margin}" width="{plot_w}" '
             f'height="{plot_h}" fill="none" stroke="#999"/>']
    for si, (name, ys) in enumerate(series):
        lo, hi = min(ys), max(ys)
        span_y = hi - lo or 1.0
        pts = " ".join(
            f"{margin + plot_w * (x - x0) / span_x:.2f},"
            f"{margin + plot_h * (1.0 - (y - lo) / span_y):.2f}"
            for x, y in zip(xs, ys))
        color = _PALETTE[si % len(_PALETTE)]
        parts.append(f'<polyline fill="none" stroke="{color}" '
                     f'stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{margin + 8}" y="{margin + 16 + 14 * si}" '
                     f'font-family="monospace" font-size="12" '
                     f'fill="{color}">{name} [{lo:.4g}, {hi:.4g}]</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_report(args):
    columns, rows = pipeline.read_metrics_csv(args.metrics)
    if args.columns:
        wanted = [c.strip() for c in args.columns.split(",") if c.strip()]
        for c in wanted:
            if c not in columns:
                raise ValueError(f"unknown metrics column: {c} "
                                 f"(have: {', '.join(columns)})")
    else:
        wanted = [c for c in columns if c not in ("iter", "wall_ms")]
    xs = [r["iter"] for r in rows]
    series = [(c, [r[c] for r in rows]) for c in wanted]
    svg = render_curves_svg(xs, series)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w") as f:
        f.write(svg)
    write_run_config(args.out + ".run_config.json",
                     run_config_dict(args, {}))
    print(f"wrote {args.out} ({len(series)} curves over {len(rows)} rows)")
    return 0


# -- parser -------------------------------------------------------------

def _add_common(p, seed_default=None):
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS thread cap (default 1 for reproducibility)")
    p.add_argument("--timing", action="store_true",
                   help="record wall_ms in metrics (off keeps reruns byte-identical)")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="raysac",
        description="Adaptive ray sampling for a small radiance field, "
                    "trained with soft actor-critic.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="synthesize a preset scene dataset")
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--n-dense", type=int, default=1024,
                   help="dense quadrature samples for ground truth")
    _add_common(p)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("pretrain", help="stage 1: fit the radiance field")
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file of flat dotted config keys")
    p.add_argument("--stage1-iters", type=int)
    p.add_argument("--batch-rays", type=int)
    p.add_argument("--stage1-samples", type=int)
    p.add_argument("--lr-field", type=float)
    p.add_argument("--lambda-reg", type=float)
    p.add_argument("--log-interval", type=int)
    p.add_argument("--n-samples", type=int, help="env samples per ray (stage 2)")
    _add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-policy",
                       help="stage 2: learn placements on the frozen field")
    p.add_argument("--field-ckpt", required=True)
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--stage2-steps", type=int)
    p.add_argument("--lr-sac", type=float)
    p.add_argument("--log-interval", type=int)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--t-ep", type=int)
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--sac-batch", type=int)
    p.add_argument("--capacity", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("render", help="render one view to a PPM image")
    p.add_argument("--field-ckpt", required=True)
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--sampler", required=True, choices=SAMPLERS)
    p.add_argument("--policy-ckpt")
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--n-samples", type=int)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("evaluate", help="score a sampler on a whole split")
    p.add_argument("--field-ckpt", required=True)
    p.add_argument("--scene-dir", required=True)
    p.add_argument("--sampler", required=True, choices=SAMPLERS)
    p.add_argument("--policy-ckpt")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--n-samples", type=int)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="plot metrics CSV columns as SVG curves")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--columns", help="comma-separated subset (default: all)")
    _add_common(p)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors, 0 on --help
        return int(e.code or 0)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FloatingPointError as e:
        print(f"error: numerical divergence: {e}", file=sys.stderr)
        return 4
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
