"""Command-line entry point: ``endorender {synth,train,render,eval,augment,gradcheck}``.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .data_io import (AnalyticSceneSpec, AugmentationSpec, export_augmented, generate_analytic_scene,
                      load_dataset, read_pose, write_depth_png)
from .errors import CheckpointError, ConfigError, DatasetError, EndoRenderError
from .evaluation import evaluate
from .gradcheck import grad_check
from .hashgrid import HashGridConfig
from .lighting import SpotlightParams
from .model import NeuralScene
from .renderer import render_image, splat_depth
from .train import TrainConfig, rng_streams, train

log = logging.getLogger("endorender")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
GRADCHECK_TOL = 1e-4


def _threads(args) -> int | None:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("ENDOPBR_THREADS")
    return int(env) if env else None


@contextlib.contextmanager
def thread_limit(n: int | None):
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=n):
        yield


def write_run_meta(out: Path, command: str, config: dict, seed: int | None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    meta = {"command": command, "version": f"endorender {__version__}", "seed": seed, "config": config}
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, default=str))


def _load_scene(path: str) -> NeuralScene:
    if not Path(path).exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return NeuralScene.load(path)


# ---------------------------------------------------------------------------

def build_train_config(args) -> TrainConfig:
    base: dict = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
    cfg = TrainConfig.from_dict(base) if base else TrainConfig()
    overrides = {k: getattr(args, k) for k in ("epochs", "lr", "seed", "lambda_m", "lambda_b",
                                               "pixels_per_iter", "frames_per_iter", "checkpoint_every")
                 if getattr(args, k) is not None}
    hg = asdict(cfg.hashgrid)
    for flag, key in (("hash_levels", "levels"), ("hash_features", "features_per_level"),
                      ("hash_base_res", "base_resolution"), ("hash_finest_res", "finest_resolution")):
        if getattr(args, flag) is not None:
            hg[key] = getattr(args, flag)
    if args.hash_log2_size is not None:
        hg["table_size"] = 2 ** args.hash_log2_size
    try:
        cfg = TrainConfig(**{**asdict(cfg), **overrides, "hashgrid": HashGridConfig(**hg),
                             "init_light": cfg.init_light, "factor4": args.factor4 or cfg.factor4})
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    for name in ("lr", "pixels_per_iter", "frames_per_iter"):
        if getattr(cfg, name) <= 0:
            raise ConfigError(f"{name} must be positive")
    if cfg.epochs < 0 or cfg.lambda_m < 0 or cfg.lambda_b < 0:
        raise ConfigError("epochs and regularizer weights must be non-negative")
    return cfg


def cmd_train(args) -> int:
    cfg = build_train_config(args)
    ds = load_dataset(args.data)
    out = Path(args.out)
    write_run_meta(out, "train", cfg.to_dict(), cfg.seed)

    def progress(epoch, bd):
        log.info("epoch %d  total %.6f  l1 %.6f", epoch, bd.total, bd.l1)

    scene = train(ds, cfg, out, progress=progress)
    log_path = out / "train_log.csv"
    rows = log_path.read_text().strip().splitlines()
    if len(rows) > 1:
        last = dict(zip(rows[0].split(","), rows[-1].split(",")))
        print(f"final loss: total={last['total']} l1={last['l1']} metallic={last['metallic']} "
              f"smoothness={last['smoothness']}")
    print(f"light: {scene.light}")
    print(f"checkpoint: {out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_render(args) -> int:
    scene = _load_scene(args.checkpoint)
    ds = load_dataset(args.data)
    K = ds.intrinsics
    out = Path(args.out)
    write_run_meta(out, "render", vars(args), None)
    (out / "images").mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    if args.pose:
        targets = [(Path(p).stem, read_pose(Path(p)), None) for p in args.pose]
    else:
        wanted = set(args.frames) if args.frames else None
        targets = [(f"{f.frame_id:04d}", f.pose, f.depth) for f in ds.frames
                   if wanted is None or f.frame_id in wanted]
    for name, pose, depth in targets:
        if depth is None:
            if not args.splat:
                raise ConfigError(f"pose {name} has no depth; pass --splat to synthesize it")
            depth = splat_depth(pose, ds.frames, K)
            frac = float(np.mean(depth > 0))
            if frac < 0.5:
                log.warning("pose %s: splatted depth covers only %.0f%% of the image", name, 100 * frac)
            (out / "depth").mkdir(exist_ok=True)
            write_depth_png(out / "depth" / f"{name}.png", depth, ds.depth_scale)
        res = render_image(pose, depth, K, scene)
        Image.fromarray(res.image).save(out / "images" / f"{name}.png")
    print(f"rendered {len(targets)} image(s) to {out / 'images'}")
    return status


def cmd_eval(args) -> int:
    scene = _load_scene(args.checkpoint)
    ds = load_dataset(args.data)
    test = ds.split("test")
    if not test:
        raise DatasetError("test split is empty")
    report = evaluate(scene, test, ds.intrinsics)
    out = Path(args.out)
    write_run_meta(out, "eval", vars(args), None)
    report.write(out)
    for f, p, s in zip(report.frame_ids, report.psnr, report.ssim):
        print(f"frame {f:5d}  PSNR {p:7.3f} dB  SSIM {s:.4f}")
    print(f"mean      PSNR {report.mean_psnr:7.3f} dB  SSIM {report.mean_ssim:.4f}")
    return EXIT_OK


def cmd_augment(args) -> int:
    scene = _load_scene(args.checkpoint)
    if scene.store.step == 0:
        log.warning("checkpoint %s has never been trained", args.checkpoint)
    ds = load_dataset(args.data)
    try:
        spec = AugmentationSpec.from_json(args.spec) if args.spec else AugmentationSpec()
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as e:
        raise ConfigError(f"bad augmentation spec: {e}") from e
    if args.samples_per_frame is not None:
        spec.samples_per_frame = args.samples_per_frame
    out = Path(args.out)
    write_run_meta(out, "augment", {"spec": asdict(spec), **vars(args)}, args.seed)
    rng = rng_streams(args.seed)["sample"]
    report = export_augmented(scene, ds, spec, out, rng)
    print(f"wrote {report.written} samples; skipped {report.skipped_sparse} sparse, "
          f"{report.skipped_excluded} excluded training poses")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    scene = _load_scene(args.checkpoint)
    rng = rng_streams(args.seed)["sample"]
    report = grad_check(scene, args.samples, rng)
    for group, err in sorted(report.max_rel_error.items()):
        flag = "ok" if err < args.tol else "FAIL"
        print(f"{group:8s} max rel err {err:.3e}  ({report.checked[group]} checks)  {flag}")
    if not report.max_rel_error:
        print("no samples checked")
    return EXIT_OK if report.passed(args.tol) else EXIT_RUNTIME


def cmd_synth(args) -> int:
    spec = AnalyticSceneSpec(kind=args.kind, n_views=args.views)
    for key in ("width", "height", "focal", "distance", "radius"):
        if getattr(args, key) is not None:
            setattr(spec, key, getattr(args, key))
    if args.albedo:
        spec.base_color = tuple(args.albedo)
    if args.roughness is not None:
        spec.roughness = args.roughness
    if args.metallic is not None:
        spec.metallic = args.metallic
    if args.light:
        spec.light = SpotlightParams(*args.light)
    ds = generate_analytic_scene(spec, args.out)
    print(f"wrote {len(ds.frames)} frames to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="endorender", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"endorender {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--threads", type=int, help="cap worker threads (env ENDOPBR_THREADS)")

    t = sub.add_parser("train", help="fit materials and light to a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", default="runs/train")
    t.add_argument("--config", help="JSON file with training settings; flags win")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda-m", dest="lambda_m", type=float)
    t.add_argument("--lambda-b", dest="lambda_b", type=float)
    t.add_argument("--pixels-per-iter", dest="pixels_per_iter", type=int)
    t.add_argument("--frames-per-iter", dest="frames_per_iter", type=int)
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    t.add_argument("--hash-levels", dest="hash_levels", type=int)
    t.add_argument("--hash-features", dest="hash_features", type=int)
    t.add_argument("--hash-log2-size", dest="hash_log2_size", type=int)
    t.add_argument("--hash-base-res", dest="hash_base_res", type=int)
    t.add_argument("--hash-finest-res", dest="hash_finest_res", type=int)
    t.add_argument("--factor4", action="store_true", help="use the 4(n.wi)(n.wo) specular denominator")
    common(t)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render images from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True, help="dataset supplying intrinsics, poses and depth")
    r.add_argument("--frames", type=int, nargs="*", help="frame ids to render (default: all)")
    r.add_argument("--pose", nargs="*", help="pose files (4x4 camera-to-world) for novel views")
    r.add_argument("--splat", action="store_true", help="splat dataset depth into poses lacking depth")
    r.add_argument("--out", default="runs/render")
    common(r)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="PSNR/SSIM on the test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default="runs/eval")
    common(e)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("augment", help="export an augmented synthetic dataset")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--spec", help="AugmentationSpec JSON")
    a.add_argument("--samples-per-frame", dest="samples_per_frame", type=int)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default="runs/augment")
    common(a)
    a.set_defaults(func=cmd_augment)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--samples", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    common(g)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="generate an analytic sphere/plane dataset")
    s.add_argument("--kind", choices=("sphere", "plane"), default="sphere")
    s.add_argument("--views", type=int, default=20)
    s.add_argument("--out", required=True)
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--focal", type=float)
    s.add_argument("--distance", type=float)
    s.add_argument("--radius", type=float)
    s.add_argument("--albedo", type=float, nargs=3)
    s.add_argument("--roughness", type=float)
    s.add_argument("--metallic", type=float)
    s.add_argument("--light", type=float, nargs=4, metavar=("L0", "N", "Q", "GAMMA"))
    common(s)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with thread_limit(_threads(args)):
            return args.func(args)
    except (ConfigError, DatasetError, CheckpointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (EndoRenderError, FloatingPointError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
