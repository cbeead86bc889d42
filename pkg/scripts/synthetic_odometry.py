"""Chain direct pose fits along a rendered sequence and score the trajectory.

Each consecutive pair is fitted with the true depth of the later frame, so
the result isolates the warp/optimizer path from network capacity.
"""

import argparse
from pathlib import Path

import numpy as np

from posedepth.geometry import log_rotation
from posedepth.odometry import Trajectory, accumulate, evaluate, serialize_kitti_poses, write_svg
from posedepth.synth import Snippet, render_sequence
from posedepth.training import direct_pose_fit


def pose_vector(pose):
    return np.concatenate([log_rotation(pose.rotation), pose.translation])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--frames", type=int, default=12)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--motion", default="0,0.003,0,0.02,0,0.15")
    parser.add_argument("--iterations", type=int, default=250)
    parser.add_argument("--out", default="runs/odometry")
    args = parser.parse_args()

    motion = np.array([float(v) for v in args.motion.split(",")])
    frames, depths, cameras, k = render_sequence(args.seed, motion, args.frames)
    steps = []
    for j in range(1, args.frames):
        # target j, reference j-1: the fit returns points of j expressed in camera j-1
        pair = Snippet([frames[j], frames[j], frames[j - 1]], k, [depths[j]] * 3)
        # warm start from the previous step (constant-velocity prior)
        initial = pose_vector(steps[-1]) if steps else None
        steps.append(direct_pose_fit(pair, args.iterations, ref=1, initial=initial))
        print(f"frame {j}: t={np.round(steps[-1].translation, 4)}", flush=True)
    estimate = accumulate(steps)
    reference = Trajectory.from_poses(cameras)
    report = evaluate(estimate, reference, lengths=(0.5, 1.0))
    print(report.table())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "estimate.txt").write_text(serialize_kitti_poses(estimate))
    (out / "reference.txt").write_text(serialize_kitti_poses(reference))
    write_svg(out / "trajectory.svg", {"reference": reference.positions, "estimate": estimate.positions})


if __name__ == "__main__":
    main()
