import numpy as np
import pytest

from posedepth import tensor as T
from posedepth.config import RunConfig
from posedepth.geometry import log_rotation
from posedepth.networks import weight_digest
from posedepth.synth import synth_scene
from posedepth.training import (Adam, DivergenceError, Models, TrainingDivergence, direct_pose_fit, learning_rate_at,
                                predict_poses, train, train_step, training_snippets)

SMALL = dict(height="32", width="64", channels="8,8,16,16", train_scenes="4")


def small_config(**extra) -> RunConfig:
    return RunConfig().update({**SMALL, **{k: str(v) for k, v in extra.items()}})


def test_learning_rate_schedule():
    assert learning_rate_at(0, 600, 1e-4) == 1e-4
    assert learning_rate_at(499, 600, 1e-4) == 1e-4
    assert learning_rate_at(500, 600, 1e-4) == pytest.approx(1e-5)


def test_adam_minimizes_quadratic():
    x = T.Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([x], 0.1)
    for _ in range(300):
        opt.zero_grad()
        (x * x).sum().backward()
        opt.step()
    assert np.abs(x.data).max() < 0.05


def test_zero_learning_rate_leaves_weights_bitwise():
    cfg = small_config(learning_rate=0, steps=2)
    models = Models.build(cfg)
    before = {k: v.copy() for k, v in models.named_state().items()}
    train(cfg, models=models, snippets=training_snippets(cfg, 1))
    after = models.named_state()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_same_seed_same_losses():
    cfg = small_config(steps=3)
    runs = [[r.total for r in train(cfg)[1]] for _ in range(2)]
    assert runs[0] == runs[1]


def test_frozen_branch_and_gates_during_training():
    cfg = small_config(steps=5)
    models = Models.build(cfg)
    digest = weight_digest(models.posenet.equivariant)
    seen = []
    train(cfg, models=models, callback=lambda step, r: seen.extend(
        float(g.gamma().item()) for g in models.posenet.gates))
    assert weight_digest(models.posenet.equivariant) == digest
    assert all(0 < g < 1 for g in seen)


def test_loss_reports_finite_and_nonnegative():
    cfg = small_config(steps=2)
    for r in train(cfg)[1]:
        assert all(np.isfinite(v) and v >= 0 for v in (r.photometric, r.smoothness, r.total))
        assert r.total == pytest.approx(r.photometric + 1e-3 * r.smoothness, rel=1e-5)


def test_nonfinite_loss_aborts_with_diagnostics():
    cfg = small_config()
    sn = training_snippets(cfg, 1)[0]
    sn.frames[0] = np.full_like(sn.frames[0], np.nan)
    models = Models.build(cfg)
    with pytest.raises(TrainingDivergence, match="pose_prev"):
        train_step(sn, models, Adam(models.trainable()), cfg)


@pytest.mark.slow
def test_overfit_fixed_snippet_trends_down():
    cfg = small_config(steps=200)
    sn = training_snippets(cfg, 1)
    losses = np.array([r.total for r in train(cfg, snippets=sn)[1]])
    slope = np.polyfit(np.arange(len(losses)), losses, 1)[0]
    assert slope < 0
    assert losses[-20:].mean() < losses[:20].mean()


def test_static_pairs_give_near_identity_pose():
    cfg = small_config(steps=30, automask="off")
    static = [synth_scene(s, np.zeros(6), (32, 64)) for s in range(3)]
    models, _ = train(cfg, snippets=static)
    with T.no_grad():
        for sn in static:
            for vec in predict_poses(models, sn)[0]:
                assert np.linalg.norm(vec.data) < 0.01


def test_direct_fit_zero_motion():
    sn = synth_scene(5, np.zeros(6))
    pose = direct_pose_fit(sn, 150)
    assert np.linalg.norm(pose.translation) < 1e-3
    assert np.linalg.norm(log_rotation(pose.rotation)) < 1e-3


def test_direct_fit_needs_depth():
    sn = synth_scene(5, np.zeros(6))
    sn.depths = None
    with pytest.raises(ValueError):
        direct_pose_fit(sn, 1)


def test_direct_fit_divergence_detected():
    sn = synth_scene(5, [0, 0, 0, 0.05, 0, 0])
    with pytest.raises(DivergenceError):
        direct_pose_fit(sn, 100, lr=0.05, patience=3)


@pytest.mark.slow
def test_direct_fit_error_falls_with_contrast():
    """Fixed sensor noise on every frame; lower contrast means lower signal to noise."""
    errors = []
    for contrast in (0.1, 0.3, 1.0):
        sn = synth_scene(5, [0, 0, 0, 0.05, 0, 0], n_planes=1, contrast=contrast)
        noise = np.random.default_rng(0)
        sn.frames = [f + noise.normal(scale=0.01, size=f.shape).astype(np.float32) for f in sn.frames]
        truth = sn.relative_poses[1].numpy().translation
        fitted = direct_pose_fit(sn, 300).translation
        errors.append(np.linalg.norm(fitted - truth) / np.linalg.norm(truth))
    assert errors[0] > errors[1] > errors[2]


def test_direct_fit_warm_start_stays_at_truth():
    sn = synth_scene(5, [0, 0, 0, 0.05, 0, 0], n_planes=1)
    truth = sn.relative_poses[1].numpy()
    start = np.concatenate([log_rotation(truth.rotation), truth.translation])
    fitted = direct_pose_fit(sn, 20, initial=start).translation
    assert np.linalg.norm(fitted - truth.translation) < 0.05 * np.linalg.norm(truth.translation)
