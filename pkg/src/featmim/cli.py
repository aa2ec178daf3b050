"""Command-line surface.

Subcommands: pretrain, dump-features, diversity, heatmap, pca, grad-check,
ablate-lambda. Configuration is one JSON document (see config.py); every
command validates it fully before touching the filesystem, and all outputs
land under the path given by --out.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error.
"""

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .analysis import heatmap, pca_reduce, render_pgm
from .config import RunConfig, load_run_config, save_run_config
from .diversity import corpus_diversity
from .errors import ConfigError, DataError, NumericError
from .gradcheck import grad_check, tiny_run_config
from .imageio import load_images
from .teacher import (TeacherFeatures, TeacherSpec, dump_features,
                      load_feature_dir, make_teacher)
from .tensor import read_tvec, write_tvec
from .trainer import ablate_lambda, train


def _common_flags(p):
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--threads", type=int, default=1,
                   help="reserved for kernel parallelism; execution is single-threaded")


def _resolved_config(args, mask_seed=None):
    cfg = load_run_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    if mask_seed is not None:
        cfg = replace(cfg, mask=replace(cfg.mask, seed=mask_seed))
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    cfg.validate()
    return cfg


def _load_image_dir(path, cfg):
    images = load_images(path, cfg.data.norm_mean, cfg.data.norm_std)
    if not images:
        raise DataError(f"no .pgm/.ppm images found in {path}")
    return images


def cmd_pretrain(args):
    cfg = _resolved_config(args, mask_seed=args.mask_seed)
    images = _load_image_dir(args.images, cfg)
    os.makedirs(args.out, exist_ok=True)
    save_run_config(cfg, os.path.join(args.out, "config.json"))
    result = train(cfg, images, args.out)
    print(f"pretrain: {result.total_steps} steps, final L_total "
          f"{result.final_l_total:.6g} -> {result.final_checkpoint}")
    return 0


def cmd_dump_features(args):
    if args.config:
        cfg = _resolved_config(args)
        spec, patch_side = cfg.teacher, cfg.model.patch_side
        norm = (cfg.data.norm_mean, cfg.data.norm_std)
    else:
        kind = "procedural-conv" if args.teacher == "procedural" else args.teacher
        spec = TeacherSpec(kind=kind, downsample_rate=args.downsample,
                           target_dim=args.target_dim,
                           seed=args.seed if args.seed is not None else 0,
                           l2_normalize=args.l2_normalize)
        spec.validate()
        patch_side, norm = args.patch_side, (0.5, 0.5)
    images = load_images(args.images, *norm)
    if not images:
        raise DataError(f"no .pgm/.ppm images found in {args.images}")
    channels = {img.shape[0] for _, img in images}
    if len(channels) != 1:
        raise DataError(f"images disagree on channel count: {sorted(channels)}")
    teacher = make_teacher(spec, in_channels=channels.pop())
    manifest = dump_features(teacher, images, args.out, patch_side)
    print(f"dump-features: wrote {len(manifest['entries'])} feature files to {args.out}")
    return 0


def cmd_diversity(args):
    samples = load_feature_dir(args.features)
    report = corpus_diversity(samples)
    with open(args.out, "w") as f:
        json.dump({"n": report.n_samples, "k": report.tokens_per_sample,
                   "diver": report.diver, "per_sample": report.per_sample},
                  f, indent=1)
    print(f"diversity: {report.diver:.6f} over {report.n_samples} samples "
          f"({report.tokens_per_sample} tokens each)")
    return 0


def cmd_heatmap(args):
    tokens = read_tvec(args.features)
    if tokens.ndim != 2:
        raise DataError(f"{args.features}: expected a 2-d token file, got rank {tokens.ndim}")
    grid = math.isqrt(tokens.shape[0])
    if grid * grid != tokens.shape[0]:
        raise DataError(f"{args.features}: {tokens.shape[0]} tokens is not a square grid")
    feats = TeacherFeatures(tokens=tokens, grid_side=grid,
                            source_id=os.path.basename(args.features))
    render_pgm(heatmap(feats, args.query), args.out)
    print(f"heatmap: query {args.query} on a {grid}x{grid} grid -> {args.out}")
    return 0


def cmd_pca(args):
    samples = load_feature_dir(args.features)
    if not samples:
        raise DataError(f"no feature samples in {args.features}")
    x = np.vstack([s.tokens for s in samples])
    projected, _, explained = pca_reduce(x, args.components)
    write_tvec(args.out, projected.astype(np.float32))
    with open(f"{args.out}.json", "w") as f:
        json.dump({"n_components": args.components,
                   "explained_variance": explained.tolist()}, f, indent=1)
    print(f"pca: {x.shape} -> {projected.shape} written to {args.out}")
    return 0


def cmd_grad_check(args):
    cfg = load_run_config(args.config) if args.config else tiny_run_config()
    cfg.validate()
    report = grad_check(cfg, h=args.h)
    if args.out:
        with open(args.out, "w") as f:
            json.dump({"max_rel_err": report.max_rel_err,
                       "worst_param": report.worst_param,
                       "n_parameters": report.n_parameters,
                       "per_param": report.per_param}, f, indent=1)
    status = "PASS" if report.passed(args.tolerance) else "FAIL"
    print(f"grad-check: {status} max rel err {report.max_rel_err:.3e} "
          f"({report.worst_param}) over {report.n_parameters} parameters")
    return 0 if report.passed(args.tolerance) else 4


def cmd_ablate_lambda(args):
    cfg = _resolved_config(args)
    lambdas = [float(v) for v in args.lambdas.split(",") if v != ""]
    if len(lambdas) < 2:
        raise ConfigError("--lambdas needs at least two comma-separated values")
    images = _load_image_dir(args.images, cfg)
    csv_path = ablate_lambda(cfg, lambdas, images, args.out)
    print(f"ablate-lambda: swept {lambdas} -> {csv_path}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="featmim",
        description="masked image modeling with deep-feature targets")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run the pretraining loop")
    _common_flags(p)
    p.add_argument("--images", required=True, help="directory of .pgm/.ppm images")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--mask-seed", type=int, default=None, help="override mask.seed")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("dump-features", help="extract teacher features to files")
    _common_flags(p)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True, help="feature directory")
    p.add_argument("--teacher", choices=["procedural", "procedural-conv"],
                   default="procedural")
    p.add_argument("--target-dim", type=int, default=16)
    p.add_argument("--downsample", type=int, default=8)
    p.add_argument("--patch-side", type=int, default=8)
    p.add_argument("--l2-normalize", action="store_true")
    p.set_defaults(func=cmd_dump_features)

    p = sub.add_parser("diversity", help="token-diversity report for a feature dump")
    _common_flags(p)
    p.add_argument("--features", required=True, help="feature directory with manifest.json")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_diversity)

    p = sub.add_parser("heatmap", help="query-patch similarity heat-map")
    _common_flags(p)
    p.add_argument("--features", required=True, help="single .tvec token file")
    p.add_argument("--query", type=int, required=True, help="query patch index")
    p.add_argument("--out", required=True, help="output PGM path")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("pca", help="reduce token dimensionality")
    _common_flags(p)
    p.add_argument("--features", required=True, help="feature directory with manifest.json")
    p.add_argument("--components", type=int, required=True)
    p.add_argument("--out", required=True, help="output .tvec path")
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("grad-check", help="verify analytic gradients end to end")
    _common_flags(p)
    p.add_argument("--out", help="optional report JSON path")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("ablate-lambda", help="sweep the global loss weight")
    _common_flags(p)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lambdas", required=True, help="comma-separated weights, e.g. 0,0.5,1")
    p.set_defaults(func=cmd_ablate_lambda)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
