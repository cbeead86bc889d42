"""Command-line entry point: ``posedepth <subcommand> ...``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checks
from . import io as pio
from . import tensor as T
from .config import ConfigError, RunConfig
from .feature_flow import DEFAULT_WINDOW, caffe_forward
from .geometry import pose_from_vector
from .networks import frozen_encoder
from .odometry import SYNTHETIC_LENGTHS, KITTI_LENGTHS, evaluate, parse_kitti_poses
from .synth import render_sequence

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3


class CommandError(RuntimeError):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    pairs = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError("key=value", f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        pairs["seed"] = str(args.seed)
    if getattr(args, "steps", None) is not None:
        pairs["steps"] = str(args.steps)
    return config.update(pairs).validate()


# -- subcommands -------------------------------------------------------------

def cmd_synth(args) -> int:
    out = Path(args.out)
    motion = np.array(_floats(args.motion))
    if motion.size != 6:
        raise CommandError("argument", f"--motion needs 6 values, got {motion.size}")
    for n in range(args.scenes):
        frames, depths, cameras, k = render_sequence(args.seed + n, motion, args.frames, (args.height, args.width))
        target = out if args.scenes == 1 else out / f"scene_{n:03d}"
        pio.write_scene(target, frames, depths, cameras, k)
    print(f"wrote {args.scenes} scene(s) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import heldout_snippets, train, translation_direction_errors

    config = _load_config(args)
    out = Path(args.out or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    models, history = train(config)
    pio.save_checkpoint(out / "checkpoint.scpd", models.named_state())
    errors = translation_direction_errors(models, heldout_snippets(config))
    lines = [f"steps={config.steps}", f"seed={config.seed}",
             f"photometric_first={history[0].photometric:.9g}",
             f"photometric_last={history[-1].photometric:.9g}",
             f"heldout_direction_median_deg={float(np.median(errors)):.9g}"]
    lines += [f"step_{j}={r.photometric:.9g},{r.smoothness:.9g},{r.total:.9g}"
              for j, r in enumerate(history) if j % 100 == 0 or j == len(history) - 1]
    report = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(report)
    (out / "config.txt").write_text(config.to_text())
    sys.stdout.write(report)
    return EXIT_OK


def _stage_features(image: np.ndarray, stage: int, seed: int):
    encoder = frozen_encoder(seed=seed)
    if not 1 <= stage <= len(encoder.stages):
        raise CommandError("argument", f"--stage must lie in 1..{len(encoder.stages)}")
    with T.no_grad():
        return encoder(T.Tensor(image))[stage - 1]


def cmd_flow(args) -> int:
    ref, tgt = pio.read_ppm(args.reference), pio.read_ppm(args.target)
    if ref.shape != tgt.shape:
        raise CommandError("shape", f"image shapes differ: {ref.shape} vs {tgt.shape}")
    with T.no_grad():
        if args.stage == 0:
            field = caffe_forward(tgt, ref, args.window)
        else:
            field = caffe_forward(_stage_features(tgt, args.stage, args.frozen_seed),
                                  _stage_features(ref, args.stage, args.frozen_seed), args.window)
    pio.write_flow(args.out, field.flow.data)
    if args.confidence:
        pio.write_pgm(args.confidence, field.confidence.data[..., 0])
    flow = field.flow.data
    print(f"flow {flow.shape[0]}x{flow.shape[1]} max_abs={float(np.abs(flow).max()):.6f} "
          f"mean_confidence={float(field.confidence.data.mean()):.6f}")
    return EXIT_OK


def cmd_infer_pose(args) -> int:
    from .geometry import CameraIntrinsics
    from .synth import default_intrinsics
    from .training import Models

    config = _load_config(args)
    models = Models.build(config)
    if args.checkpoint:
        models.load_named_state(pio.load_checkpoint(args.checkpoint))
    ref, tgt = pio.read_ppm(args.reference), pio.read_ppm(args.target)
    k = CameraIntrinsics.from_text(args.intrinsics) if args.intrinsics else default_intrinsics(*tgt.shape[1:])
    with T.no_grad():
        depth = models.depthnet(T.Tensor(tgt))
        vec = models.posenet(T.Tensor(ref), T.Tensor(tgt), depth, k).data.astype(float)
    mat = pose_from_vector(vec).matrix[:3]
    print("vector " + " ".join(f"{v:.9g}" for v in vec))
    for row in mat:
        print(" ".join(f"{v:.9g}" for v in row))
    return EXIT_OK


def cmd_eval_odometry(args) -> int:
    est = parse_kitti_poses(Path(args.estimate).read_text())
    ref = parse_kitti_poses(Path(args.reference).read_text())
    if len(est) != len(ref):
        raise CommandError("data", f"pose counts differ: {len(est)} vs {len(ref)}")
    lengths = tuple(_floats(args.lengths)) if args.lengths else (KITTI_LENGTHS if args.kitti else SYNTHETIC_LENGTHS)
    report = evaluate(est, ref, lengths, step=args.step, alignment_mode=args.alignment)
    sys.stdout.write(report.table() if args.table else report.key_values())
    return EXIT_OK


def _report(results, out) -> int:
    text = "".join(r.line() + "\n" for r in results)
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_gradcheck(args) -> int:
    return _report(checks.run_gradient_suite(args.seed), args.out)


def cmd_selftest(args) -> int:
    return _report(checks.run_selftest(args.seed), args.out)


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posedepth", description="Pose/depth toy pipeline tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render synthetic scene directories")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--motion", default="0,0.002,0,0.1,0,0.05", help="per-step axis-angle and translation")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=192)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="toy self-supervised training")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("flow", help="dump the feature flow for an image pair")
    p.add_argument("reference")
    p.add_argument("target")
    p.add_argument("--out", required=True)
    p.add_argument("--confidence", help="optional PGM path for the confidence map")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--stage", type=int, default=0, help="0 matches raw pixels, i>0 frozen-encoder stage i")
    p.add_argument("--frozen-seed", type=int, default=1)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("infer-pose", help="predict the target->reference pose of an image pair")
    p.add_argument("reference")
    p.add_argument("target")
    p.add_argument("--checkpoint")
    p.add_argument("--intrinsics", help="'fx fy cx cy'")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_infer_pose)

    p = sub.add_parser("eval-odometry", help="compare two KITTI pose files")
    p.add_argument("estimate")
    p.add_argument("reference")
    p.add_argument("--lengths", help="segment lengths in meters, comma separated")
    p.add_argument("--kitti", action="store_true", help="use the 100..800 m segment lengths")
    p.add_argument("--step", type=int, default=10)
    p.add_argument("--alignment", choices=("snippet", "full"), default="snippet")
    p.add_argument("--table", action="store_true")
    p.set_defaults(func=cmd_eval_odometry)

    for name, func, text in (("gradcheck", cmd_gradcheck, "finite-difference gradient suite"),
                             ("selftest", cmd_selftest, "all invariant suites")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out")
        p.set_defaults(func=func)
    return parser


def _error_line(kind: str, message: str) -> str:
    return f"error kind={kind} message={' '.join(str(message).split())!r}"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error kind=config invariant={exc.invariant} message={' '.join(str(exc).split())!r}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandError as exc:
        print(_error_line(exc.kind, exc), file=sys.stderr)
        return EXIT_FAIL
    except (OSError, ValueError, RuntimeError) as exc:
        print(_error_line(type(exc).__name__, exc), file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
