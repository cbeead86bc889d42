"""End-to-end acceptance checks; each prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from posedepth import checks
from posedepth import tensor as T
from posedepth.cli import main
from posedepth.config import RunConfig
from posedepth.feature_flow import caffe_forward
from posedepth.geometry import PoseSE3, rodrigues
from posedepth.odometry import Trajectory, evaluate, kitti_relative_errors, umeyama_align
from posedepth.synth import synth_scene
from posedepth.training import (Models, direct_pose_fit, heldout_snippets, predict_poses, snippet_loss, train,
                                translation_direction_errors)


@pytest.fixture
def announce(capsys):
    def emit(number, name, passed, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {name}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed
    return emit


def test_1_soft_argmax_matches_hard_argmax(announce):
    start = time.perf_counter()
    result = checks.soft_hard_agreement(10_000)
    elapsed = time.perf_counter() - start
    ok = result.passed and elapsed < 5.0
    assert announce(1, "soft_vs_hard_argmax", ok, f"max_err={result.value:.3e}px time={elapsed:.2f}s")


def test_2_confidence_matches_brute_force(announce):
    result = checks.confidence_agreement(1000)
    assert announce(2, "confidence_formula", result.passed, f"max_err={result.value:.3e} uniform_exact={result.passed}")


def test_3_gradient_suite(announce):
    results = checks.run_gradient_suite()
    worst = max(results, key=lambda r: r.value)
    ok = all(r.passed for r in results)
    assert announce(3, "gradient_suite", ok, f"ops={len(results)} worst={worst.name}:{worst.value:.3e}")


def test_4_integer_shift_flow_recovery(announce):
    rng = np.random.default_rng(0)
    hits, total = 0, 0
    for dx in range(-2, 3):
        for dy in range(-2, 3):
            target = rng.normal(size=(32, 24, 24))
            reference = np.roll(target, (dy, dx), axis=(1, 2))
            flow = caffe_forward(target, reference, 5).flow.data[2:-2, 2:-2]
            err = np.linalg.norm(flow - np.array([dx, dy]), axis=-1)
            hits += int((err < 0.1).sum())
            total += err.size
    frac = hits / total
    assert announce(4, "integer_shift_flow", frac >= 0.95, f"within_0.1px={frac:.4f}")


def test_5_direct_pose_fit(announce):
    sn = synth_scene(5, [0, 0, 0, 0.05, 0, 0], n_planes=1)
    start = time.perf_counter()
    fitted = direct_pose_fit(sn, 499)
    elapsed = time.perf_counter() - start
    truth = sn.relative_poses[1].numpy().translation
    rel = float(np.linalg.norm(fitted.translation - truth) / np.linalg.norm(truth))
    assert announce(5, "direct_pose_fit", rel < 0.05 and elapsed < 60, f"rel_err={rel:.4f} time={elapsed:.1f}s")


@pytest.fixture(scope="session")
def toy_training():
    config = RunConfig().validate()
    held = heldout_snippets(config)
    models = Models.build(config)

    def heldout_photometric():
        with T.no_grad():
            return float(np.mean([snippet_loss(models, sn, config)[1].item() for sn in held]))

    before = heldout_photometric()
    start = time.perf_counter()
    _, history = train(config, models=models)
    elapsed = time.perf_counter() - start
    return dict(models=models, held=held, history=history, elapsed=elapsed,
                loss_before=before, loss_after=heldout_photometric())


@pytest.mark.slow
def test_6_toy_training(toy_training, announce):
    run = toy_training
    ratio = run["loss_after"] / run["loss_before"]
    median = float(np.median(translation_direction_errors(run["models"], run["held"])))
    ok = ratio < 0.5 and median < 15 and run["elapsed"] < 20 * 60
    detail = (f"loss_ratio={ratio:.3f} direction_median={median:.1f}deg time={run['elapsed']:.0f}s "
              f"train_loss_step0={run['history'][0].photometric:.4f}")
    assert announce(6, "toy_training", ok, detail)


@pytest.mark.slow
def test_trained_posenet_swap_flips_translation(toy_training):
    models = toy_training["models"]
    opposite = []
    with T.no_grad():
        for sn in toy_training["held"]:
            depth = models.depthnet(T.Tensor(sn.target))
            forward = models.posenet(T.Tensor(sn.frames[2]), T.Tensor(sn.target), depth, sn.intrinsics).data[3:]
            backward = models.posenet(T.Tensor(sn.target), T.Tensor(sn.frames[2]), depth, sn.intrinsics).data[3:]
            opposite.append(float(forward @ backward) < 0)
    assert np.mean(opposite) >= 0.75


def test_7_odometry_metrics(announce):
    straight = lambda step: Trajectory.from_poses(
        [PoseSE3(np.eye(3), np.array([step * j, 0.0, 0.0])) for j in range(900)])
    e_t, _ = kitti_relative_errors(straight(1.01), straight(1.0))
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(40, 3)) * 5
    r0 = rodrigues(np.array([0.2, -0.4, 0.7]))
    s, _, _ = umeyama_align(pts, 2.0 * pts @ r0.T + np.array([1.0, 2.0, 3.0]))
    poses = [PoseSE3(rodrigues(rng.normal(size=3) * 0.1), rng.normal(size=3) * (j + 1)) for j in range(30)]
    traj = Trajectory.from_poses(poses)
    report = evaluate(traj, traj, lengths=(2, 4))
    printed = dict(kv.split("=") for kv in report.key_values().split())
    zeros = max(report.e_t, report.e_r, report.ate) <= 1e-12 and all(float(v) == 0 for v in printed.values())
    ok = abs(e_t - 1.0) <= 1e-6 and abs(s - 2.0) <= 1e-9 and zeros
    detail = f"e_t={e_t:.9f} scale_err={abs(s - 2):.2e} identical_max={max(report.e_t, report.e_r, report.ate):.1e}"
    assert announce(7, "odometry_metrics", ok, detail)


def test_8_gate_limits(announce):
    result = checks.gate_limits()
    assert announce(8, "gate_limits", result.passed, f"max_diff={result.value:.1e}")


def test_9_determinism(tmp_path, announce):
    outputs = []
    for name in ("a", "b"):
        d = tmp_path / name
        d.mkdir()
        assert main(["selftest", "--out", str(d / "selftest.txt")]) == 0
        assert main(["train", "--steps", "40", "--seed", "3", "--out", str(d)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    same = outputs[0].keys() == outputs[1].keys() and all(outputs[0][k] == outputs[1][k] for k in outputs[0])
    assert announce(9, "determinism", same, "files=" + ",".join(outputs[0]))
